//! The perturbation distribution `Π_d` and the smoothed ranker
//! `f̄(q, d) = E_{R ~ Π_d} f(q, R)`.
//!
//! `Π_d` replaces every position `i` independently and uniformly by a member
//! of `T_{w_i}`. The smoothed score is either enumerated exactly (small
//! spaces only) or estimated from `n` samples with a two-sided Hoeffding
//! radius `sqrt(ln(2/α) / 2n)`.
//!
//! Sample `i` for document `d` under query `q` draws from its own ChaCha
//! stream derived from `(seed, q.id, d.id)` and `i`, so estimates do not
//! depend on evaluation order or worker count.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{fnv1a, Document, Query, RankedList};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::lexicon::Lexicon;
use crate::rankers::ScoreModel;

pub const DEFAULT_SAMPLES: usize = 1000;
pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_EXACT_CAP: u128 = 1_000_000;

/// `sqrt(ln(2/α) / (2n))`.
pub fn hoeffding_radius(n: usize, alpha: f64) -> f64 {
    ((2.0 / alpha).ln() / (2.0 * n as f64)).sqrt()
}

/// Seed for the per-document sample streams.
pub fn stream_key(seed: u64, query_id: &str, doc_id: &str) -> u64 {
    let mut bytes = Vec::with_capacity(10 + query_id.len() + doc_id.len());
    bytes.extend_from_slice(&seed.to_le_bytes());
    bytes.extend_from_slice(query_id.as_bytes());
    bytes.push(0xff);
    bytes.extend_from_slice(doc_id.as_bytes());
    fnv1a(&bytes)
}

pub fn sample_rng(key: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

/// One draw from `Π_d`.
pub fn sample_perturbed<R: Rng + ?Sized>(lexicon: &Lexicon, tokens: &[String], rng: &mut R) -> Vec<String> {
    tokens
        .iter()
        .map(|w| {
            let set = lexicon.perturbation_set(w);
            set[rng.gen_range(0..set.len())].clone()
        })
        .collect()
}

/// `Π_d(r) = ∏_i 1{r_i ∈ T_{w_i}} / |T_{w_i}|`.
pub fn perturbation_prob(lexicon: &Lexicon, d: &[String], r: &[String]) -> Result<f64> {
    if d.len() != r.len() {
        return Err(Error::LengthMismatch {
            left: d.len(),
            right: r.len(),
        });
    }
    let mut p = 1.0;
    for (w, x) in d.iter().zip(r) {
        let set = lexicon.perturbation_set(w);
        if !set.contains(x) {
            return Ok(0.0);
        }
        p /= set.len() as f64;
    }
    Ok(p)
}

/// Draws perturbed copies of documents from deterministic per-sample streams.
#[derive(Debug, Clone, Copy)]
pub struct PerturbationSampler<'a> {
    lexicon: &'a Lexicon,
    seed: u64,
}

impl<'a> PerturbationSampler<'a> {
    pub fn new(lexicon: &'a Lexicon, seed: u64) -> Self {
        PerturbationSampler { lexicon, seed }
    }

    pub fn sample(&self, query_id: &str, doc: &Document, index: u64) -> Vec<String> {
        let mut rng = sample_rng(stream_key(self.seed, query_id, &doc.id), index);
        sample_perturbed(self.lexicon, &doc.tokens, &mut rng)
    }
}

/// A smoothed score estimate. Exact enumeration reports `radius = 0`,
/// `alpha = 0` and `n` equal to the size of the perturbation space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothedScore {
    pub mean: f64,
    pub n: usize,
    pub radius: f64,
    pub alpha: f64,
}

impl SmoothedScore {
    pub fn exact(mean: f64, n: usize) -> Self {
        SmoothedScore {
            mean,
            n,
            radius: 0.0,
            alpha: 0.0,
        }
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.radius
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarlo {
    pub n: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for MonteCarlo {
    fn default() -> Self {
        MonteCarlo {
            n: DEFAULT_SAMPLES,
            alpha: DEFAULT_ALPHA,
            seed: 0,
        }
    }
}

impl MonteCarlo {
    fn check(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParameter("need at least one sample".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }

    pub fn radius(&self) -> f64 {
        hoeffding_radius(self.n, self.alpha)
    }
}

/// How smoothed scores are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Smoothing {
    Exact { cap: u128 },
    MonteCarlo(MonteCarlo),
}

impl Smoothing {
    pub fn exact() -> Self {
        Smoothing::Exact { cap: DEFAULT_EXACT_CAP }
    }

    pub fn estimate<M: ScoreModel + ?Sized>(
        &self,
        model: &M,
        lexicon: &Lexicon,
        query: &Query,
        doc: &Document,
        exec: Exec,
    ) -> Result<SmoothedScore> {
        match *self {
            Smoothing::Exact { cap } => {
                let size = space_size(lexicon, &doc.tokens);
                let mean = smoothed_score_exact(model, lexicon, query, &doc.tokens, cap, exec)?;
                Ok(SmoothedScore::exact(mean, size as usize))
            }
            Smoothing::MonteCarlo(mc) => smoothed_score_mc(model, lexicon, query, doc, &mc, exec),
        }
    }
}

/// `(1/n) Σ_i f(q, R_i)` with `R_i ~ Π_d` i.i.d.
pub fn smoothed_score_mc<M: ScoreModel + ?Sized>(
    model: &M,
    lexicon: &Lexicon,
    query: &Query,
    doc: &Document,
    mc: &MonteCarlo,
    exec: Exec,
) -> Result<SmoothedScore> {
    mc.check()?;
    let key = stream_key(mc.seed, &query.id, &doc.id);
    let total = exec.sum_range(mc.n, |i| {
        let mut rng = sample_rng(key, i as u64);
        let r = sample_perturbed(lexicon, &doc.tokens, &mut rng);
        model.score(query, &r)
    });
    Ok(SmoothedScore {
        mean: total / mc.n as f64,
        n: mc.n,
        radius: mc.radius(),
        alpha: mc.alpha,
    })
}

/// `∏_i |T_{w_i}|`, saturating.
pub fn space_size(lexicon: &Lexicon, tokens: &[String]) -> u128 {
    tokens
        .iter()
        .fold(1u128, |acc, w| acc.saturating_mul(lexicon.perturbation_set(w).len() as u128))
}

/// Decodes a mixed-radix index into one element of `∏_i sets[i]`.
pub(crate) fn decode<'a>(sets: &[&'a [String]], mut index: usize) -> Vec<String> {
    let mut out = vec![String::new(); sets.len()];
    for (slot, set) in out.iter_mut().zip(sets).rev() {
        *slot = set[index % set.len()].clone();
        index /= set.len();
    }
    out
}

/// Exact `E_{R ~ Π_d} f(q, R)` by enumerating the whole product space.
pub fn smoothed_score_exact<M: ScoreModel + ?Sized>(
    model: &M,
    lexicon: &Lexicon,
    query: &Query,
    tokens: &[String],
    cap: u128,
    exec: Exec,
) -> Result<f64> {
    let size = space_size(lexicon, tokens);
    if size > cap {
        return Err(Error::SpaceTooLarge { size, cap });
    }
    let sets: Vec<&[String]> = tokens.iter().map(|w| lexicon.perturbation_set(w)).collect();
    let size = size as usize;
    let total = exec.sum_range(size, |i| model.score(query, &decode(&sets, i)));
    Ok(total / size as f64)
}

/// The smoothed ranker with exact expectation, usable wherever a
/// [`ScoreModel`] is expected. Scoring cost is the size of the document's
/// perturbation space; no cap is applied here.
pub struct ExactSmoothed<'a, M: ?Sized> {
    pub model: &'a M,
    pub lexicon: &'a Lexicon,
    pub exec: Exec,
}

impl<'a, M: ScoreModel + ?Sized> ExactSmoothed<'a, M> {
    pub fn new(model: &'a M, lexicon: &'a Lexicon) -> Self {
        ExactSmoothed {
            model,
            lexicon,
            exec: Exec::Sequential,
        }
    }
}

impl<M: ScoreModel + ?Sized> ScoreModel for ExactSmoothed<'_, M> {
    fn score(&self, query: &Query, tokens: &[String]) -> f64 {
        smoothed_score_exact(self.model, self.lexicon, query, tokens, u128::MAX, self.exec)
            .expect("uncapped enumeration cannot fail")
    }
}

/// The smoothed ranker estimated by Monte Carlo. All documents scored under
/// one query share the same sample streams, so candidates that differ in a
/// few positions are compared with common random numbers.
pub struct MonteCarloSmoothed<'a, M: ?Sized> {
    pub model: &'a M,
    pub lexicon: &'a Lexicon,
    pub mc: MonteCarlo,
    pub exec: Exec,
}

impl<M: ScoreModel + ?Sized> ScoreModel for MonteCarloSmoothed<'_, M> {
    fn score(&self, query: &Query, tokens: &[String]) -> f64 {
        let key = stream_key(self.mc.seed, &query.id, "");
        let n = self.mc.n.max(1);
        let total = self.exec.sum_range(n, |i| {
            let mut rng = sample_rng(key, i as u64);
            let r = sample_perturbed(self.lexicon, tokens, &mut rng);
            self.model.score(query, &r)
        });
        total / n as f64
    }
}

/// `L_q^s`: candidates re-ranked by smoothed score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedList {
    pub list: RankedList,
    pub scores: BTreeMap<String, SmoothedScore>,
}

pub fn smoothed_rank<M: ScoreModel + ?Sized>(
    model: &M,
    lexicon: &Lexicon,
    query: &Query,
    docs: &[&Document],
    smoothing: &Smoothing,
    exec: Exec,
) -> Result<SmoothedList> {
    let estimates = exec.map(docs, |d| smoothing.estimate(model, lexicon, query, d, exec));
    let mut scores = BTreeMap::new();
    let mut pairs = Vec::with_capacity(docs.len());
    for (d, est) in docs.iter().zip(estimates) {
        let est = est?;
        pairs.push((d.id.clone(), est.mean));
        scores.insert(d.id.clone(), est);
    }
    Ok(SmoothedList {
        list: RankedList::from_scores(query.id.clone(), pairs),
        scores,
    })
}
