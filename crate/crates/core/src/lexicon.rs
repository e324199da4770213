//! Synonym and perturbation dictionaries built from word embeddings.
//!
//! `S_w` (the synonym set) is the attacker's substitution menu; `T_w` (the
//! perturbation set) is the smoothing noise. `T_w` is the `J` members of `S_w`
//! closest to `w`, with `w` itself always first. Words that cannot keep the
//! same `|T_w|` as all of their synonyms are demoted to `T_w = {w}`.
//!
//! Tokens absent from the lexicon behave as singletons: `S_w = T_w = {w}`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;

/// Default cosine threshold for synonym construction.
pub const DEFAULT_TAU: f64 = 0.8;

#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<Vec<f64>>,
}

impl EmbeddingTable {
    pub fn from_entries<I, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut table = EmbeddingTable {
            dim: 0,
            words: Vec::new(),
            index: HashMap::new(),
            vectors: Vec::new(),
        };
        for (word, vector) in entries {
            table.push(word.into(), vector)?;
        }
        Ok(table)
    }

    fn push(&mut self, word: String, vector: Vec<f64>) -> Result<()> {
        if vector.is_empty() {
            return Err(Error::InvalidParameter(format!("`{word}` has an empty vector")));
        }
        if self.words.is_empty() {
            self.dim = vector.len();
        } else if vector.len() != self.dim {
            return Err(Error::LengthMismatch {
                left: self.dim,
                right: vector.len(),
            });
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter(format!("`{word}` has a non-finite component")));
        }
        if self.index.contains_key(&word) {
            return Err(Error::DuplicateId(word));
        }
        self.index.insert(word.clone(), self.words.len());
        self.words.push(word);
        self.vectors.push(vector);
        Ok(())
    }

    /// Reads `token v1 ... vD` lines. A first line made of exactly two
    /// integers is taken as a `count dim` header and skipped.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut table = EmbeddingTable {
            dim: 0,
            words: Vec::new(),
            index: HashMap::new(),
            vectors: Vec::new(),
        };
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let rest: Vec<&str> = parts.collect();
            if i == 0 && rest.len() == 1 && word.parse::<u64>().is_ok() && rest[0].parse::<u64>().is_ok()
            {
                continue;
            }
            let vector = rest
                .iter()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(path, i + 1, format!("bad float: {e}")))?;
            table
                .push(word.to_string(), vector)
                .map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        }
        Ok(table)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.index.get(word).map(|&i| self.vectors[i].as_slice())
    }

    /// Cosine similarity, `None` when either word is missing or has zero norm.
    pub fn cosine(&self, a: &str, b: &str) -> Option<f64> {
        cosine(self.get(a)?, self.get(b)?)
    }
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some(dot / (na * nb))
    }
}

/// `S_w` for every vocabulary word, stored sorted and always containing `w`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SynonymDict {
    sets: BTreeMap<String, Vec<String>>,
    rejected: Vec<String>,
}

impl SynonymDict {
    /// Builds a dictionary from explicit sets without closing or checking them.
    pub fn from_sets<I, W, S>(sets: I) -> Self
    where
        I: IntoIterator<Item = (W, S)>,
        W: Into<String>,
        S: IntoIterator,
        S::Item: Into<String>,
    {
        let sets = sets
            .into_iter()
            .map(|(w, s)| {
                let set: BTreeSet<String> = s.into_iter().map(Into::into).collect();
                (w.into(), set.into_iter().collect())
            })
            .collect();
        SynonymDict {
            sets,
            rejected: Vec::new(),
        }
    }

    pub fn get(&self, word: &str) -> Option<&[String]> {
        self.sets.get(word).map(Vec::as_slice)
    }

    pub fn contains_word(&self, word: &str) -> bool {
        self.sets.contains_key(word)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<String>)> {
        self.sets.iter()
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// Tokens dropped during construction because their vectors had zero norm.
    pub fn rejected(&self) -> &[String] {
        &self.rejected
    }
}

/// `S_w = {w} ∪ {w' : cos(w, w') ≥ tau}`, then symmetrically closed.
pub fn build_synonym_dict(emb: &EmbeddingTable, tau: f64, exec: Exec) -> Result<SynonymDict> {
    if emb.is_empty() {
        return Err(Error::EmptyEmbeddings);
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidParameter(format!("tau must lie in (0, 1), got {tau}")));
    }
    let mut rejected = Vec::new();
    let mut kept: Vec<(&String, Vec<f64>)> = Vec::new();
    for (word, v) in emb.words.iter().zip(&emb.vectors) {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            log::warn!("rejecting `{word}`: zero-norm embedding");
            rejected.push(word.clone());
        } else {
            kept.push((word, v.iter().map(|x| x / norm).collect()));
        }
    }
    let neighbours: Vec<Vec<usize>> = exec.map_range(kept.len(), |i| {
        let vi = &kept[i].1;
        (0..kept.len())
            .filter(|&j| {
                j == i || vi.iter().zip(&kept[j].1).map(|(a, b)| a * b).sum::<f64>() >= tau
            })
            .collect()
    });
    let mut sets: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (i, nb) in neighbours.iter().enumerate() {
        for &j in nb {
            sets.entry(kept[i].0.clone()).or_default().insert(kept[j].0.clone());
            sets.entry(kept[j].0.clone()).or_default().insert(kept[i].0.clone());
        }
    }
    Ok(SynonymDict {
        sets: sets
            .into_iter()
            .map(|(w, s)| (w, s.into_iter().collect()))
            .collect(),
        rejected,
    })
}

/// `T_w` for every vocabulary word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbDict {
    j: usize,
    sets: BTreeMap<String, Vec<String>>,
    perturbable: BTreeMap<String, bool>,
}

impl PerturbDict {
    /// Builds a dictionary from explicit sets. A word is marked perturbable
    /// when its set has more than one member.
    pub fn from_sets<I, W, S>(j: usize, sets: I) -> Self
    where
        I: IntoIterator<Item = (W, S)>,
        W: Into<String>,
        S: IntoIterator,
        S::Item: Into<String>,
    {
        let sets: BTreeMap<String, Vec<String>> = sets
            .into_iter()
            .map(|(w, s)| (w.into(), s.into_iter().map(Into::into).collect()))
            .collect();
        let perturbable = sets.iter().map(|(w, s)| (w.clone(), s.len() > 1)).collect();
        PerturbDict {
            j,
            sets,
            perturbable,
        }
    }

    pub fn j(&self) -> usize {
        self.j
    }

    pub fn get(&self, word: &str) -> Option<&[String]> {
        self.sets.get(word).map(Vec::as_slice)
    }

    pub fn is_perturbable(&self, word: &str) -> bool {
        self.perturbable.get(word).copied().unwrap_or(false)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<String>)> {
        self.sets.iter()
    }

    fn set_len(&self, word: &str) -> usize {
        self.sets.get(word).map_or(1, Vec::len)
    }

    fn demote(&mut self, word: &str) {
        self.sets.insert(word.to_string(), vec![word.to_string()]);
        self.perturbable.insert(word.to_string(), false);
    }

    /// Demotes perturbable words whose set size differs from one of their
    /// synonyms until no such word remains. Returns the number of passes
    /// that demoted at least one word.
    pub fn enforce_equal_sizes(&mut self, syn: &SynonymDict) -> usize {
        let mut rounds = 0;
        loop {
            let offenders: Vec<String> = self
                .perturbable
                .iter()
                .filter(|(_, &p)| p)
                .map(|(w, _)| w)
                .filter(|w| {
                    let own = self.set_len(w);
                    syn.get(w)
                        .unwrap_or_default()
                        .iter()
                        .any(|s| self.set_len(s) != own)
                })
                .cloned()
                .collect();
            if offenders.is_empty() {
                return rounds;
            }
            rounds += 1;
            for w in offenders {
                self.demote(&w);
            }
        }
    }
}

/// Keeps the `j` members of `S_w` nearest to `w` (with `w` first and cosine
/// ties broken by token order), then enforces equal set sizes across
/// synonyms.
pub fn build_perturb_dict(syn: &SynonymDict, emb: &EmbeddingTable, j: usize) -> Result<PerturbDict> {
    if j == 0 {
        return Err(Error::InvalidParameter("J must be at least 1".into()));
    }
    let mut sets = BTreeMap::new();
    let mut perturbable = BTreeMap::new();
    for (w, s) in syn.iter() {
        if s.len() < j {
            sets.insert(w.clone(), vec![w.clone()]);
            perturbable.insert(w.clone(), false);
            continue;
        }
        let mut others = Vec::with_capacity(s.len());
        for o in s.iter().filter(|o| *o != w) {
            let sim = emb.cosine(w, o).ok_or_else(|| Error::UnknownWord(o.clone()))?;
            others.push((sim, o));
        }
        others.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        let mut set = Vec::with_capacity(j);
        set.push(w.clone());
        set.extend(others.into_iter().take(j - 1).map(|(_, o)| o.clone()));
        sets.insert(w.clone(), set);
        perturbable.insert(w.clone(), true);
    }
    let mut dict = PerturbDict {
        j,
        sets,
        perturbable,
    };
    let rounds = dict.enforce_equal_sizes(syn);
    log::debug!("equal-size enforcement took {rounds} demotion passes");
    Ok(dict)
}

/// `o_w = min_{w' ∈ S_w} |T_w ∩ T_w'| / |T_w|`.
pub fn overlap(pert: &PerturbDict, syn: &SynonymDict, w: &str) -> Result<f64> {
    let synonyms = syn.get(w).ok_or_else(|| Error::UnknownWord(w.to_string()))?;
    let own = pert.get(w).ok_or_else(|| Error::UnknownWord(w.to_string()))?;
    let mut best = 1.0f64;
    for s in synonyms {
        let other = match pert.get(s) {
            Some(t) => t,
            None => std::slice::from_ref(s),
        };
        best = best.min(intersection_size(own, other) as f64 / own.len() as f64);
    }
    Ok(best)
}

pub(crate) fn intersection_size(a: &[String], b: &[String]) -> usize {
    a.iter().filter(|x| b.contains(x)).count()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OverlapTable {
    values: BTreeMap<String, f64>,
}

impl OverlapTable {
    pub fn build(pert: &PerturbDict, syn: &SynonymDict) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (w, _) in syn.iter() {
            values.insert(w.clone(), overlap(pert, syn, w)?);
        }
        Ok(OverlapTable { values })
    }

    pub fn get(&self, word: &str) -> Option<f64> {
        self.values.get(word).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Asymmetric { word: String, synonym: String },
    MissingSelfSynonym { word: String },
    MissingSelfPerturbation { word: String },
    UnknownMember { word: String, member: String },
    NotSynonym { word: String, member: String },
    MissingPerturbSet { word: String },
    SizeMismatch { word: String, synonym: String, word_size: usize, synonym_size: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_admissible(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Lists every broken lexicon invariant. Size mismatches are reported once
/// per unordered synonym pair.
pub fn validate_lexicon(pert: &PerturbDict, syn: &SynonymDict) -> ValidationReport {
    let mut violations = Vec::new();
    for (w, s) in syn.iter() {
        if !s.contains(w) {
            violations.push(Violation::MissingSelfSynonym { word: w.clone() });
        }
        for o in s {
            match syn.get(o) {
                None => violations.push(Violation::UnknownMember {
                    word: w.clone(),
                    member: o.clone(),
                }),
                Some(back) if !back.contains(w) => violations.push(Violation::Asymmetric {
                    word: w.clone(),
                    synonym: o.clone(),
                }),
                _ => {}
            }
        }
        let Some(t) = pert.get(w) else {
            violations.push(Violation::MissingPerturbSet { word: w.clone() });
            continue;
        };
        if !t.contains(w) {
            violations.push(Violation::MissingSelfPerturbation { word: w.clone() });
        }
        for m in t.iter().filter(|m| !s.contains(m)) {
            violations.push(Violation::NotSynonym {
                word: w.clone(),
                member: m.clone(),
            });
        }
        for o in s.iter().filter(|o| w < *o) {
            if let Some(to) = pert.get(o) {
                if to.len() != t.len() {
                    violations.push(Violation::SizeMismatch {
                        word: w.clone(),
                        synonym: o.clone(),
                        word_size: t.len(),
                        synonym_size: to.len(),
                    });
                }
            }
        }
    }
    ValidationReport { violations }
}

/// Synonym and perturbation dictionaries plus the derived overlaps.
#[derive(Debug, Clone)]
pub struct Lexicon {
    synonyms: SynonymDict,
    perturb: PerturbDict,
    overlaps: OverlapTable,
}

#[derive(Serialize, Deserialize)]
struct LexiconFile {
    #[serde(rename = "J")]
    j: usize,
    synonyms: BTreeMap<String, Vec<String>>,
    perturb: BTreeMap<String, Vec<String>>,
    perturbable: BTreeMap<String, bool>,
}

impl Lexicon {
    pub fn build(emb: &EmbeddingTable, tau: f64, j: usize, exec: Exec) -> Result<Self> {
        let synonyms = build_synonym_dict(emb, tau, exec)?;
        let perturb = build_perturb_dict(&synonyms, emb, j)?;
        Self::from_parts(synonyms, perturb)
    }

    /// Assembles a lexicon without validating it; see [`Lexicon::validate`].
    pub fn from_parts(synonyms: SynonymDict, perturb: PerturbDict) -> Result<Self> {
        let overlaps = OverlapTable::build(&perturb, &synonyms)?;
        Ok(Lexicon {
            synonyms,
            perturb,
            overlaps,
        })
    }

    pub fn synonym_dict(&self) -> &SynonymDict {
        &self.synonyms
    }

    pub fn perturb_dict(&self) -> &PerturbDict {
        &self.perturb
    }

    pub fn validate(&self) -> ValidationReport {
        validate_lexicon(&self.perturb, &self.synonyms)
    }

    /// `S_w`; a singleton for unknown tokens.
    pub fn synonyms<'a>(&'a self, token: &'a String) -> &'a [String] {
        self.synonyms
            .get(token)
            .unwrap_or_else(|| std::slice::from_ref(token))
    }

    /// `T_w`; a singleton for unknown tokens.
    pub fn perturbation_set<'a>(&'a self, token: &'a String) -> &'a [String] {
        self.perturb
            .get(token)
            .unwrap_or_else(|| std::slice::from_ref(token))
    }

    /// `o_w`; 1 for unknown tokens.
    pub fn word_overlap(&self, token: &str) -> f64 {
        self.overlaps.get(token).unwrap_or(1.0)
    }

    /// `|T_w ∩ T_w'|`.
    pub fn shared_perturbations(&self, w: &String, other: &String) -> usize {
        intersection_size(self.perturbation_set(w), self.perturbation_set(other))
    }

    pub fn to_json(&self) -> Result<String> {
        let file = LexiconFile {
            j: self.perturb.j,
            synonyms: self.synonyms.sets.clone(),
            perturb: self.perturb.sets.clone(),
            perturbable: self.perturb.perturbable.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: LexiconFile = serde_json::from_str(text)?;
        let synonyms = SynonymDict {
            sets: file.synonyms,
            rejected: Vec::new(),
        };
        let perturb = PerturbDict {
            j: file.j,
            sets: file.perturb,
            perturbable: file.perturbable,
        };
        Self::from_parts(synonyms, perturb)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
