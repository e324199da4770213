//! Documents, queries and ranked lists, plus the on-disk formats:
//! JSONL corpus, `qid<TAB>text` queries, 6-column TREC runs, 4-column qrels
//! and `qid<TAB>pos<TAB>neg` training triples.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowercases, splits on whitespace and strips non-alphanumeric characters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tokenizer {
    pub lowercase: bool,
    pub strip_punctuation: bool,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Tokenizer {
            lowercase: true,
            strip_punctuation: true,
        }
    }
}

impl Tokenizer {
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        text.split_whitespace()
            .map(|raw| {
                let t: String = if self.strip_punctuation {
                    raw.chars().filter(|c| c.is_alphanumeric()).collect()
                } else {
                    raw.to_string()
                };
                if self.lowercase {
                    t.to_lowercase()
                } else {
                    t
                }
            })
            .filter(|t| !t.is_empty())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<String>,
}

impl Document {
    pub fn new(id: impl Into<String>, tokens: Vec<String>) -> Self {
        Document {
            id: id.into(),
            tokens,
        }
    }

    pub fn from_words(id: impl Into<String>, words: &[&str]) -> Self {
        Self::new(id, words.iter().map(|w| w.to_string()).collect())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub tokens: Vec<String>,
}

impl Query {
    pub fn new(id: impl Into<String>, tokens: Vec<String>) -> Self {
        Query {
            id: id.into(),
            tokens,
        }
    }

    pub fn from_words(id: impl Into<String>, words: &[&str]) -> Self {
        Self::new(id, words.iter().map(|w| w.to_string()).collect())
    }
}

pub type Corpus = BTreeMap<String, Document>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub doc_id: String,
    pub score: f64,
}

/// Entries ordered by score, highest first. Positions are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    /// Sorts by score descending, ties by doc id ascending.
    pub fn from_scores(query_id: impl Into<String>, scores: Vec<(String, f64)>) -> Self {
        let mut entries: Vec<RankedEntry> = scores
            .into_iter()
            .map(|(doc_id, score)| RankedEntry { doc_id, score })
            .collect();
        entries.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id)));
        RankedList {
            query_id: query_id.into(),
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// 1-based position of `doc_id`.
    pub fn rank_of(&self, doc_id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.doc_id == doc_id).map(|p| p + 1)
    }

    /// Entry at 1-based `rank`.
    pub fn at(&self, rank: usize) -> Option<&RankedEntry> {
        rank.checked_sub(1).and_then(|i| self.entries.get(i))
    }

    /// Position `doc_id` would take if its score were `score`, with every
    /// other entry keeping its own score and ties ordered by doc id.
    pub fn rank_with_score(&self, doc_id: &str, score: f64) -> usize {
        1 + self
            .entries
            .iter()
            .filter(|e| e.doc_id != doc_id)
            .filter(|e| e.score > score || (e.score == score && e.doc_id.as_str() < doc_id))
            .count()
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
struct CorpusLine {
    id: String,
    text: String,
}

pub fn parse_corpus(text: &str, tokenizer: &Tokenizer, path: &Path) -> Result<Corpus> {
    let mut corpus = Corpus::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusLine = if line.trim_start().starts_with('{') {
            serde_json::from_str(line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?
        } else {
            let (id, text) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, i + 1, "expected a JSON object or `id<TAB>text`"))?;
            CorpusLine {
                id: id.trim().to_string(),
                text: text.to_string(),
            }
        };
        let tokens = tokenizer.tokenize(&rec.text);
        if tokens.is_empty() {
            return Err(Error::parse(path, i + 1, format!("document `{}` has no tokens", rec.id)));
        }
        if corpus.contains_key(&rec.id) {
            return Err(Error::DuplicateId(rec.id));
        }
        corpus.insert(rec.id.clone(), Document::new(rec.id, tokens));
    }
    Ok(corpus)
}

/// One `{"id": ..., "text": ...}` object or one `id<TAB>text` row per line
/// (the MS MARCO collection layout).
pub fn load_corpus(path: impl AsRef<Path>, tokenizer: &Tokenizer) -> Result<Corpus> {
    let path = path.as_ref();
    parse_corpus(&read(path)?, tokenizer, path)
}

/// `qid<TAB>text` per line.
pub fn load_queries(path: impl AsRef<Path>, tokenizer: &Tokenizer) -> Result<BTreeMap<String, Query>> {
    let path = path.as_ref();
    let mut out = BTreeMap::new();
    for (i, line) in read(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (qid, text) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, i + 1, "expected `qid<TAB>text`"))?;
        let tokens = tokenizer.tokenize(text);
        if tokens.is_empty() {
            return Err(Error::parse(path, i + 1, format!("query `{qid}` has no tokens")));
        }
        if out.contains_key(qid) {
            return Err(Error::DuplicateId(qid.to_string()));
        }
        out.insert(qid.to_string(), Query::new(qid, tokens));
    }
    Ok(out)
}

pub fn parse_run(text: &str, path: &Path) -> Result<BTreeMap<String, RankedList>> {
    let mut raw: BTreeMap<String, Vec<(usize, String, f64)>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        // TREC `qid Q0 doc rank score tag` or MS MARCO `qid doc rank`
        let (doc, rank_col, score_col) = match cols.len() {
            6 => (cols[2], cols[3], Some(cols[4])),
            3 => (cols[1], cols[2], None),
            n => return Err(Error::parse(path, i + 1, format!("expected 6 or 3 columns, found {n}"))),
        };
        let rank: usize = rank_col
            .parse()
            .map_err(|e| Error::parse(path, i + 1, format!("bad rank: {e}")))?;
        let score: f64 = match score_col {
            Some(c) => c.parse().map_err(|e| Error::parse(path, i + 1, format!("bad score: {e}")))?,
            None => -(rank as f64),
        };
        let list = raw.entry(cols[0].to_string()).or_default();
        if list.iter().any(|(_, d, _)| d == doc) {
            return Err(Error::parse(path, i + 1, format!("duplicate doc `{doc}` for query `{}`", cols[0])));
        }
        list.push((rank, doc.to_string(), score));
    }
    let mut out = BTreeMap::new();
    for (qid, mut rows) in raw {
        rows.sort_by_key(|r| r.0);
        let monotone = rows.windows(2).all(|w| w[0].2 >= w[1].2);
        if !monotone {
            log::warn!("run for query `{qid}`: ranks not ordered by score; re-sorting");
        }
        let list = RankedList::from_scores(qid.clone(), rows.into_iter().map(|(_, d, s)| (d, s)).collect());
        out.insert(qid, list);
    }
    Ok(out)
}

/// `qid Q0 docid rank score tag` lines, or `qid docid rank` lines whose
/// scores are taken as `-rank`. Entries are re-sorted by score.
pub fn load_run(path: impl AsRef<Path>) -> Result<BTreeMap<String, RankedList>> {
    let path = path.as_ref();
    parse_run(&read(path)?, path)
}

pub fn format_run<'a>(lists: impl IntoIterator<Item = &'a RankedList>, tag: &str) -> String {
    let mut out = String::new();
    for list in lists {
        for (i, e) in list.entries.iter().enumerate() {
            let _ = writeln!(out, "{} Q0 {} {} {} {}", list.query_id, e.doc_id, i + 1, e.score, tag);
        }
    }
    out
}

pub fn write_run<'a>(
    path: impl AsRef<Path>,
    lists: impl IntoIterator<Item = &'a RankedList>,
    tag: &str,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_run(lists, tag)).map_err(|e| Error::io(path, e))
}

/// `qid iter docid rel`; documents with `rel > 0` are relevant.
pub fn load_qrels(path: impl AsRef<Path>) -> Result<BTreeMap<String, BTreeSet<String>>> {
    let path = path.as_ref();
    let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (i, line) in read(path)?.lines().enumerate() {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        if cols.len() != 4 {
            return Err(Error::parse(path, i + 1, format!("expected 4 columns, found {}", cols.len())));
        }
        let rel: i64 = cols[3]
            .parse()
            .map_err(|e| Error::parse(path, i + 1, format!("bad relevance: {e}")))?;
        let entry = out.entry(cols[0].to_string()).or_default();
        if rel > 0 {
            entry.insert(cols[2].to_string());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingTriple {
    pub query_id: String,
    pub positive: String,
    pub negative: String,
}

/// `qid<TAB>pos_doc<TAB>neg_doc` per line.
pub fn load_triples(path: impl AsRef<Path>) -> Result<Vec<TrainingTriple>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for (i, line) in read(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(Error::parse(path, i + 1, "expected `qid<TAB>pos<TAB>neg`"));
        }
        if cols[1] == cols[2] {
            return Err(Error::parse(path, i + 1, "positive and negative documents are identical"));
        }
        out.push(TrainingTriple {
            query_id: cols[0].to_string(),
            positive: cols[1].to_string(),
            negative: cols[2].to_string(),
        });
    }
    Ok(out)
}

/// FNV-1a over raw bytes; stable across processes and platforms.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
