//! Relevance scorers mapping a (query, document) pair into `[0, 1]`.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Query, RankedList};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::lexicon::{cosine, EmbeddingTable};

/// A base ranker `f(q, d)`. Implementations must be deterministic, return
/// values in `[0, 1]`, and be callable from many threads at once.
///
/// Documents are passed as token slices so perturbed copies can be scored
/// without building a [`Document`].
pub trait ScoreModel: Send + Sync {
    fn score(&self, query: &Query, tokens: &[String]) -> f64;
}

impl<M: ScoreModel + ?Sized> ScoreModel for &M {
    fn score(&self, query: &Query, tokens: &[String]) -> f64 {
        (**self).score(query, tokens)
    }
}

impl<M: ScoreModel + ?Sized> ScoreModel for Box<M> {
    fn score(&self, query: &Query, tokens: &[String]) -> f64 {
        (**self).score(query, tokens)
    }
}

impl<M: ScoreModel + ?Sized> ScoreModel for Arc<M> {
    fn score(&self, query: &Query, tokens: &[String]) -> f64 {
        (**self).score(query, tokens)
    }
}

pub fn score<M: ScoreModel + ?Sized>(model: &M, query: &Query, doc: &Document) -> f64 {
    model.score(query, &doc.tokens)
}

/// Scores every candidate and sorts by score descending, ties by doc id.
pub fn rank<M: ScoreModel + ?Sized>(model: &M, query: &Query, candidates: &[Document], exec: Exec) -> RankedList {
    let scores = exec.map(candidates, |d| (d.id.clone(), model.score(query, &d.tokens)));
    RankedList::from_scores(query.id.clone(), scores)
}

/// `s / (s + c)`, strictly increasing on `s ≥ 0` for `c > 0`.
pub fn squash(raw: f64, c: f64) -> f64 {
    raw / (raw + c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Model {
    k1: f64,
    b: f64,
    doc_freq: HashMap<String, usize>,
    n_docs: usize,
    avg_len: f64,
    squash_scale: f64,
    /// Hash of the corpus the statistics were collected from.
    #[serde(default)]
    corpus_hash: u64,
}

impl Bm25Model {
    pub const DEFAULT_K1: f64 = 0.9;
    pub const DEFAULT_B: f64 = 0.4;

    pub fn from_corpus<'a, I>(docs: I, k1: f64, b: f64) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Document>,
    {
        if !(k1 > 0.0) || !(0.0..=1.0).contains(&b) {
            return Err(Error::InvalidParameter(format!("BM25 needs k1 > 0 and 0 <= b <= 1 (k1={k1}, b={b})")));
        }
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        let mut n_docs = 0;
        let mut total_len = 0usize;
        for d in docs {
            n_docs += 1;
            total_len += d.tokens.len();
            let uniq: HashSet<&String> = d.tokens.iter().collect();
            for t in uniq {
                *doc_freq.entry(t.clone()).or_default() += 1;
            }
        }
        if n_docs == 0 {
            return Err(Error::Uninitialized("BM25 needs at least one document".into()));
        }
        Ok(Bm25Model {
            k1,
            b,
            doc_freq,
            n_docs,
            avg_len: total_len as f64 / n_docs as f64,
            squash_scale: 1.0,
            corpus_hash: 0,
        })
    }

    pub fn with_squash_scale(mut self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidParameter(format!("squash scale must be positive, got {c}")));
        }
        self.squash_scale = c;
        Ok(self)
    }

    pub fn with_corpus_hash(mut self, hash: u64) -> Self {
        self.corpus_hash = hash;
        self
    }

    pub fn corpus_hash(&self) -> u64 {
        self.corpus_hash
    }

    pub fn squash_scale(&self) -> f64 {
        self.squash_scale
    }

    /// Sets the squashing constant to the mean raw score of the top document
    /// over the given (query, candidates) pools. Leaves it at 1 when every
    /// top score is zero.
    pub fn calibrate<'a, I>(&mut self, pools: I)
    where
        I: IntoIterator<Item = (&'a Query, Vec<&'a Document>)>,
    {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (q, docs) in pools {
            let top = docs
                .iter()
                .map(|d| self.raw_score(q, &d.tokens))
                .fold(0.0f64, f64::max);
            sum += top;
            count += 1;
        }
        let c = if count > 0 { sum / count as f64 } else { 0.0 };
        self.squash_scale = if c > 0.0 { c } else { 1.0 };
    }

    pub fn idf(&self, term: &str) -> f64 {
        let df = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        let n = self.n_docs as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Unsquashed BM25 over the distinct query terms.
    pub fn raw_score(&self, query: &Query, tokens: &[String]) -> f64 {
        let len = tokens.len() as f64;
        let norm = self.k1 * (1.0 - self.b + self.b * len / self.avg_len);
        let mut seen = HashSet::new();
        let mut total = 0.0;
        for term in &query.tokens {
            if !seen.insert(term) {
                continue;
            }
            let tf = tokens.iter().filter(|t| *t == term).count() as f64;
            if tf > 0.0 {
                total += self.idf(term) * tf * (self.k1 + 1.0) / (tf + norm);
            }
        }
        total
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    /// Loads cached statistics if they were built from a corpus with `hash`.
    pub fn load_cached(path: impl AsRef<Path>, hash: u64) -> Result<Option<Self>> {
        let path = path.as_ref();
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: Bm25Model = serde_json::from_str(&text)?;
        Ok((model.corpus_hash == hash).then_some(model))
    }
}

impl ScoreModel for Bm25Model {
    fn score(&self, query: &Query, tokens: &[String]) -> f64 {
        squash(self.raw_score(query, tokens), self.squash_scale)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Number of hand-built features before the embedding products.
pub const BASE_FEATURES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    pub dim: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
}

/// `sigmoid(w · φ(q, d) + b)` where `φ` holds the exact-match fraction of
/// query terms, the cosine between mean embeddings, the mean best-match
/// cosine per query term, and the elementwise product of the unit mean
/// embeddings.
#[derive(Debug, Clone)]
pub struct LinearEmbedScorer {
    params: LinearParams,
    embeddings: Arc<EmbeddingTable>,
}

impl LinearEmbedScorer {
    pub fn zeros(embeddings: Arc<EmbeddingTable>) -> Self {
        let dim = embeddings.dim();
        LinearEmbedScorer {
            params: LinearParams {
                dim,
                weights: vec![0.0; BASE_FEATURES + dim],
                bias: 0.0,
            },
            embeddings,
        }
    }

    pub fn from_params(params: LinearParams, embeddings: Arc<EmbeddingTable>) -> Result<Self> {
        if params.dim != embeddings.dim() || params.weights.len() != BASE_FEATURES + params.dim {
            return Err(Error::LengthMismatch {
                left: params.weights.len(),
                right: BASE_FEATURES + embeddings.dim(),
            });
        }
        if params.weights.iter().chain([&params.bias]).any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("non-finite model parameter".into()));
        }
        Ok(LinearEmbedScorer { params, embeddings })
    }

    pub fn params(&self) -> &LinearParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut LinearParams {
        &mut self.params
    }

    pub fn embeddings(&self) -> &Arc<EmbeddingTable> {
        &self.embeddings
    }

    pub fn n_features(&self) -> usize {
        self.params.weights.len()
    }

    fn unit_mean(&self, tokens: &[String]) -> Option<Vec<f64>> {
        let mut acc = vec![0.0; self.params.dim];
        let mut any = false;
        for t in tokens {
            if let Some(v) = self.embeddings.get(t) {
                any = true;
                for (a, x) in acc.iter_mut().zip(v) {
                    *a += x;
                }
            }
        }
        let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        (any && norm > 0.0).then(|| acc.into_iter().map(|x| x / norm).collect())
    }

    pub fn features(&self, query: &Query, tokens: &[String]) -> Vec<f64> {
        let mut phi = vec![0.0; self.n_features()];
        let distinct: HashSet<&String> = query.tokens.iter().collect();
        if !distinct.is_empty() {
            let hits = distinct.iter().filter(|t| tokens.contains(t)).count();
            phi[0] = hits as f64 / distinct.len() as f64;
        }
        let mq = self.unit_mean(&query.tokens);
        let md = self.unit_mean(tokens);
        if let (Some(mq), Some(md)) = (&mq, &md) {
            phi[1] = mq.iter().zip(md).map(|(a, b)| a * b).sum();
            for (k, (a, b)) in mq.iter().zip(md).enumerate() {
                phi[BASE_FEATURES + k] = a * b;
            }
        }
        let mut best_sum = 0.0;
        let mut counted = 0usize;
        for qt in &query.tokens {
            let Some(qv) = self.embeddings.get(qt) else { continue };
            let best = tokens
                .iter()
                .filter_map(|t| self.embeddings.get(t))
                .filter_map(|dv| cosine(qv, dv))
                .fold(None, |m: Option<f64>, c| Some(m.map_or(c, |m| m.max(c))));
            if let Some(b) = best {
                best_sum += b;
            }
            counted += 1;
        }
        if counted > 0 {
            phi[2] = best_sum / counted as f64;
        }
        phi
    }

    pub fn score_features(&self, phi: &[f64]) -> f64 {
        let z: f64 = self.params.weights.iter().zip(phi).map(|(w, x)| w * x).sum::<f64>() + self.params.bias;
        sigmoid(z)
    }

    /// Pairwise hinge `max(0, 1 - f(q, pos) + f(q, neg))` and its subgradient
    /// with respect to `(weights, bias)`.
    pub fn hinge_loss_and_grad(&self, query: &Query, pos: &[String], neg: &[String]) -> (f64, Vec<f64>, f64) {
        let phi_p = self.features(query, pos);
        let phi_n = self.features(query, neg);
        let fp = self.score_features(&phi_p);
        let fn_ = self.score_features(&phi_n);
        let loss = (1.0 - fp + fn_).max(0.0);
        let mut grad = vec![0.0; self.n_features()];
        let mut grad_b = 0.0;
        if loss > 0.0 {
            let sp = fp * (1.0 - fp);
            let sn = fn_ * (1.0 - fn_);
            for (g, (xp, xn)) in grad.iter_mut().zip(phi_p.iter().zip(&phi_n)) {
                *g = -sp * xp + sn * xn;
            }
            grad_b = -sp + sn;
        }
        (loss, grad, grad_b)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(&self.params)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>, embeddings: Arc<EmbeddingTable>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_params(serde_json::from_str(&text)?, embeddings)
    }
}

impl ScoreModel for LinearEmbedScorer {
    fn score(&self, query: &Query, tokens: &[String]) -> f64 {
        self.score_features(&self.features(query, tokens))
    }
}
