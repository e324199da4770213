//! Noise-augmented pairwise training of [`LinearEmbedScorer`].
//!
//! Each step draws noised copies of the positive and negative documents from
//! `Π_d` and takes a subgradient step on
//! `max(0, 1 - f(q, d⁺_noised) + f(q, d⁻_noised))`.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, Query, TrainingTriple};
use crate::error::{Error, Result};
use crate::lexicon::Lexicon;
use crate::rankers::{LinearEmbedScorer, ScoreModel};
use crate::smoothing::{sample_perturbed, sample_rng, stream_key};

/// Hinge margin; fixed by the loss definition.
pub const MARGIN: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub margin: f64,
    pub seed: u64,
    pub noise_enabled: bool,
    /// Draw one noised copy per document up front instead of fresh noise
    /// every step.
    pub static_noise: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            learning_rate: 0.5,
            margin: MARGIN,
            seed: 0,
            noise_enabled: true,
            static_noise: false,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be at least 1".into()));
        }
        // zero is allowed so a run can be used as a pure evaluation pass
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!("learning rate {} must be finite and non-negative", self.learning_rate)));
        }
        if self.margin != MARGIN {
            return Err(Error::InvalidParameter("the hinge margin is fixed at 1".into()));
        }
        Ok(())
    }
}

/// One sample of `Π_d`, as a new document with the same id.
pub fn gen_noised_doc<R: Rng + ?Sized>(lexicon: &Lexicon, d: &Document, rng: &mut R) -> Document {
    Document::new(d.id.clone(), sample_perturbed(lexicon, &d.tokens, rng))
}

/// Trained model plus mean hinge loss per epoch.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: LinearEmbedScorer,
    pub loss_trace: Vec<f64>,
}

struct Resolved<'a> {
    query: &'a Query,
    pos: &'a Document,
    neg: &'a Document,
}

fn resolve<'a>(triples: &[TrainingTriple], queries: &'a BTreeMap<String, Query>, corpus: &'a Corpus) -> Result<Vec<Resolved<'a>>> {
    triples
        .iter()
        .map(|t| {
            if t.positive == t.negative {
                return Err(Error::InvalidParameter(format!("triple for `{}` uses `{}` as both positive and negative", t.query_id, t.positive)));
            }
            let query = queries
                .get(&t.query_id)
                .ok_or_else(|| Error::MissingDocument(format!("query `{}`", t.query_id)))?;
            let pos = corpus.get(&t.positive).ok_or_else(|| Error::MissingDocument(t.positive.clone()))?;
            let neg = corpus.get(&t.negative).ok_or_else(|| Error::MissingDocument(t.negative.clone()))?;
            Ok(Resolved { query, pos, neg })
        })
        .collect()
}

/// Plain SGD over shuffled triples. Deterministic given `cfg.seed`.
pub fn train(
    mut model: LinearEmbedScorer,
    triples: &[TrainingTriple],
    queries: &BTreeMap<String, Query>,
    corpus: &Corpus,
    lexicon: &Lexicon,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if triples.is_empty() {
        return Err(Error::InvalidParameter("no training triples".into()));
    }
    let data = resolve(triples, queries, corpus)?;

    let mut fixed: HashMap<&str, Vec<String>> = HashMap::new();
    if cfg.noise_enabled && cfg.static_noise {
        for r in &data {
            for d in [r.pos, r.neg] {
                fixed.entry(d.id.as_str()).or_insert_with(|| {
                    let mut rng = sample_rng(stream_key(cfg.seed, "train", &d.id), 0);
                    sample_perturbed(lexicon, &d.tokens, &mut rng)
                });
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (step, &i) in order.iter().enumerate() {
            let r = &data[i];
            let noised = |d: &Document, rng: &mut ChaCha8Rng| -> Vec<String> {
                if !cfg.noise_enabled {
                    d.tokens.clone()
                } else if cfg.static_noise {
                    fixed[d.id.as_str()].clone()
                } else {
                    sample_perturbed(lexicon, &d.tokens, rng)
                }
            };
            let pos = noised(r.pos, &mut rng);
            let neg = noised(r.neg, &mut rng);
            let (loss, grad, grad_b) = model.hinge_loss_and_grad(r.query, &pos, &neg);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    pos: model.score(r.query, &pos),
                    neg: model.score(r.query, &neg),
                });
            }
            total += loss;
            let p = model.params_mut();
            for (w, g) in p.weights.iter_mut().zip(&grad) {
                *w -= cfg.learning_rate * g;
            }
            p.bias -= cfg.learning_rate * grad_b;
        }
        let mean = total / data.len() as f64;
        log::debug!("epoch {epoch}: mean hinge loss {mean:.6}");
        trace.push(mean);
    }
    Ok(TrainOutcome { model, loss_trace: trace })
}

/// Fraction of triples with `f(q, d⁺) > f(q, d⁻)` on clean documents.
pub fn pairwise_accuracy<M: ScoreModel + ?Sized>(
    model: &M,
    triples: &[TrainingTriple],
    queries: &BTreeMap<String, Query>,
    corpus: &Corpus,
) -> Result<f64> {
    let data = resolve(triples, queries, corpus)?;
    if data.is_empty() {
        return Ok(0.0);
    }
    let good = data
        .iter()
        .filter(|r| model.score(r.query, &r.pos.tokens) > model.score(r.query, &r.neg.tokens))
        .count();
    Ok(good as f64 / data.len() as f64)
}

/// CSV `epoch,loss`.
pub fn format_loss_trace(trace: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (i, l) in trace.iter().enumerate() {
        out.push_str(&format!("{},{l}\n", i + 1));
    }
    out
}
