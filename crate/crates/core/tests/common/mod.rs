//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ops::RangeInclusive;

use rand::seq::SliceRandom;
use rand::Rng;
use rankcert::corpus::{fnv1a, Document, Query};
use rankcert::lexicon::{EmbeddingTable, Lexicon};
use rankcert::rankers::ScoreModel;
use rankcert::Exec;

/// Words grouped into tight embedding clusters plus scattered singletons,
/// built into a lexicon with the real pipeline.
pub struct RandomLexicon {
    pub lexicon: Lexicon,
    pub vocab: Vec<String>,
}

pub fn random_lexicon<R: Rng>(rng: &mut R, vocab: RangeInclusive<usize>, j: RangeInclusive<usize>) -> RandomLexicon {
    let vocab_size = rng.gen_range(vocab);
    let j = rng.gen_range(j);
    let dim = 12;
    let mut entries: Vec<(String, Vec<f64>)> = Vec::new();
    let unit = |rng: &mut R| -> Vec<f64> {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    };
    while entries.len() < vocab_size {
        let center = unit(rng);
        let size = if rng.gen_bool(0.5) { 1 } else { rng.gen_range(2..=4) };
        // cluster members differ by a small random offset; spreads vary so
        // that some members fall outside each other's top-J sets
        let spread = rng.gen_range(0.05..0.25);
        for _ in 0..size.min(vocab_size - entries.len()) {
            let off = unit(rng);
            let v: Vec<f64> = center.iter().zip(&off).map(|(c, o)| c + spread * o).collect();
            entries.push((format!("w{}", entries.len()), v));
        }
    }
    let vocab = entries.iter().map(|(w, _)| w.clone()).collect();
    let emb = EmbeddingTable::from_entries(entries).unwrap();
    let tau = rng.gen_range(0.85..0.99);
    let lexicon = Lexicon::build(&emb, tau, j, Exec::Sequential).unwrap();
    assert!(lexicon.validate().is_admissible());
    RandomLexicon { lexicon, vocab }
}

pub fn random_doc<R: Rng>(rng: &mut R, id: &str, vocab: &[String], len: usize) -> Document {
    Document::new(id, (0..len).map(|_| vocab.choose(rng).unwrap().clone()).collect())
}

/// Base rankers with scores in `[0, 1]`.
#[derive(Debug, Clone)]
pub enum ToyModel {
    /// Mean of per-word weights.
    Additive(HashMap<String, f64>),
    /// Squared mean of per-word weights.
    Convex(HashMap<String, f64>),
    /// Pseudo-random score per token sequence.
    Hash(u64),
}

impl ToyModel {
    pub fn random<R: Rng>(rng: &mut R, vocab: &[String]) -> Self {
        let w: HashMap<String, f64> = vocab.iter().map(|v| (v.clone(), rng.gen_range(0.0..1.0))).collect();
        match rng.gen_range(0..3) {
            0 => ToyModel::Additive(w),
            1 => ToyModel::Convex(w),
            _ => ToyModel::Hash(rng.gen()),
        }
    }
}

impl ScoreModel for ToyModel {
    fn score(&self, _query: &Query, tokens: &[String]) -> f64 {
        let mean = |w: &HashMap<String, f64>| {
            if tokens.is_empty() {
                0.0
            } else {
                tokens.iter().map(|t| w.get(t).copied().unwrap_or(0.5)).sum::<f64>() / tokens.len() as f64
            }
        };
        match self {
            ToyModel::Additive(w) => mean(w),
            ToyModel::Convex(w) => mean(w).powi(2),
            ToyModel::Hash(salt) => {
                let mut bytes = salt.to_le_bytes().to_vec();
                for t in tokens {
                    bytes.extend_from_slice(t.as_bytes());
                    bytes.push(0);
                }
                (fnv1a(&bytes) >> 11) as f64 / (1u64 << 53) as f64
            }
        }
    }
}

/// All token vectors in `∏_i T_{w_i}`, by nested iteration.
pub fn support(lexicon: &Lexicon, tokens: &[String]) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = vec![Vec::new()];
    for w in tokens {
        let mut next = Vec::new();
        for prefix in &out {
            for s in lexicon.perturbation_set(w) {
                let mut p = prefix.clone();
                p.push(s.clone());
                next.push(p);
            }
        }
        out = next;
    }
    out
}

/// `Π_d(r)` computed from set membership.
pub fn prob(lexicon: &Lexicon, d: &[String], r: &[String]) -> f64 {
    d.iter()
        .zip(r)
        .map(|(w, x)| {
            let t = lexicon.perturbation_set(w);
            if t.contains(x) {
                1.0 / t.len() as f64
            } else {
                0.0
            }
        })
        .product()
}

/// `E_{Π_d} f` by nested enumeration, summed in plain order.
pub fn smoothed_oracle<M: ScoreModel>(model: &M, lexicon: &Lexicon, q: &Query, tokens: &[String]) -> f64 {
    let sup = support(lexicon, tokens);
    sup.iter().map(|r| model.score(q, r)).sum::<f64>() / sup.len() as f64
}

/// `∫ (dΠ_{d'} − λ dΠ_d)_+` over the union of both supports.
pub fn integral_oracle(lexicon: &Lexicon, d: &[String], d_prime: &[String], lambda: f64) -> f64 {
    let mut points: BTreeSet<Vec<String>> = support(lexicon, d_prime).into_iter().collect();
    points.extend(support(lexicon, d));
    points
        .iter()
        .map(|r| (prob(lexicon, d_prime, r) - lambda * prob(lexicon, d, r)).max(0.0))
        .sum()
}

/// Every document reachable from `d` by changing at most `budget`
/// positions to synonyms, by recursive expansion.
pub fn all_adversarial(lexicon: &Lexicon, d: &[String], budget: usize) -> BTreeSet<Vec<String>> {
    fn go(lex: &Lexicon, d: &[String], pos: usize, left: usize, cur: &mut Vec<String>, out: &mut BTreeSet<Vec<String>>) {
        if pos == d.len() {
            out.insert(cur.clone());
            return;
        }
        cur.push(d[pos].clone());
        go(lex, d, pos + 1, left, cur, out);
        cur.pop();
        if left > 0 {
            for s in lex.synonyms(&d[pos]) {
                if *s != d[pos] {
                    cur.push(s.clone());
                    go(lex, d, pos + 1, left - 1, cur, out);
                    cur.pop();
                }
            }
        }
    }
    let mut out = BTreeSet::new();
    go(lexicon, d, 0, budget, &mut Vec::new(), &mut out);
    out
}

pub fn rel(ids: &[&str]) -> BTreeSet<String> {
    ids.iter().map(|s| s.to_string()).collect()
}

pub fn qrels(pairs: &[(&str, &[&str])]) -> BTreeMap<String, BTreeSet<String>> {
    pairs.iter().map(|(q, d)| (q.to_string(), rel(d))).collect()
}

/// A topical corpus where queries are single words from a synonym cluster.
///
/// Relevant documents hold the query word and on-topic content words. Hard
/// negatives repeat synonyms of the query word among filler, so exact match
/// separates them on clean text, while perturbation makes it unreliable.
pub struct NoiseFixture {
    pub embeddings: std::sync::Arc<EmbeddingTable>,
    pub lexicon: Lexicon,
    pub train_queries: BTreeMap<String, Query>,
    pub corpus: BTreeMap<String, Document>,
    pub triples: Vec<rankcert::corpus::TrainingTriple>,
    pub test_queries: Vec<(Query, Vec<Document>)>,
    pub qrels: BTreeMap<String, BTreeSet<String>>,
}

pub fn noise_fixture(seed: u64) -> NoiseFixture {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (topics, dim, extra) = (6usize, 10usize, 4usize);
    let mut entries: Vec<(String, Vec<f64>)> = Vec::new();
    let side = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        let v: Vec<f64> = (0..extra).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    };
    for k in 0..topics {
        for c in ["a", "b", "c"] {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.03..0.03)).collect();
            v[k] += 1.0;
            entries.push((format!("q{k}{c}"), v));
        }
        for i in 0..6 {
            let r = side(&mut rng);
            let mut v = vec![0.0; dim];
            v[k] = 1.0;
            for (x, y) in v[topics..].iter_mut().zip(&r) {
                *x = 0.6 * y;
            }
            entries.push((format!("c{k}_{i}"), v));
        }
    }
    for i in 0..12 {
        let r = side(&mut rng);
        let mut v = vec![0.0; dim];
        v[topics..].copy_from_slice(&r);
        entries.push((format!("f{i}"), v));
    }
    let emb = EmbeddingTable::from_entries(entries).unwrap();
    let lexicon = Lexicon::build(&emb, 0.9, 3, Exec::Sequential).unwrap();

    let cluster = |k: usize| -> Vec<String> { ["a", "b", "c"].iter().map(|c| format!("q{k}{c}")).collect() };
    let content = |k: usize| -> Vec<String> { (0..6).map(|i| format!("c{k}_{i}")).collect() };
    let fillers: Vec<String> = (0..12).map(|i| format!("f{i}")).collect();

    let relevant = |rng: &mut rand_chacha::ChaCha8Rng, id: String, k: usize, qw: &str| {
        let mut t = vec![qw.to_string()];
        t.extend(content(k).choose_multiple(rng, 3).cloned());
        t.push(fillers.choose(rng).unwrap().clone());
        t.shuffle(rng);
        Document::new(id, t)
    };
    let stuffed = |rng: &mut rand_chacha::ChaCha8Rng, id: String, k: usize, qw: &str| {
        let syns: Vec<String> = cluster(k).into_iter().filter(|w| w != qw).collect();
        let mut t: Vec<String> = (0..2).map(|_| syns.choose(rng).unwrap().clone()).collect();
        t.extend(fillers.choose_multiple(rng, 3).cloned());
        t.shuffle(rng);
        Document::new(id, t)
    };
    let other_topic = |rng: &mut rand_chacha::ChaCha8Rng, k: usize| (k + rng.gen_range(1..topics)) % topics;

    let mut train_queries = BTreeMap::new();
    let mut corpus = BTreeMap::new();
    let mut triples = Vec::new();
    for k in 0..topics {
        for i in 0..4 {
            let qid = format!("tq{k}_{i}");
            let qw = cluster(k).choose(&mut rng).unwrap().clone();
            train_queries.insert(qid.clone(), Query::new(qid.clone(), vec![qw.clone()]));
            let pos = relevant(&mut rng, format!("{qid}_pos"), k, &qw);
            let neg_s = stuffed(&mut rng, format!("{qid}_stuffed"), k, &qw);
            let k2 = other_topic(&mut rng, k);
            let qw2 = cluster(k2).choose(&mut rng).unwrap().clone();
            let neg_o = relevant(&mut rng, format!("{qid}_other"), k2, &qw2);
            for neg in [&neg_s, &neg_o] {
                triples.push(rankcert::corpus::TrainingTriple {
                    query_id: qid.clone(),
                    positive: pos.id.clone(),
                    negative: neg.id.clone(),
                });
            }
            for d in [pos, neg_s, neg_o] {
                corpus.insert(d.id.clone(), d);
            }
        }
    }

    let mut test_queries = Vec::new();
    let mut qrels = BTreeMap::new();
    for k in 0..topics {
        for i in 0..3 {
            let qid = format!("eq{k}_{i}");
            let qw = cluster(k).choose(&mut rng).unwrap().clone();
            let mut cands = vec![relevant(&mut rng, format!("{qid}_rel"), k, &qw)];
            for j in 0..4 {
                cands.push(stuffed(&mut rng, format!("{qid}_s{j}"), k, &qw));
            }
            for j in 0..5 {
                let k2 = other_topic(&mut rng, k);
                let qw2 = cluster(k2).choose(&mut rng).unwrap().clone();
                cands.push(relevant(&mut rng, format!("{qid}_o{j}"), k2, &qw2));
            }
            qrels.insert(qid.clone(), rel(&[&format!("{qid}_rel")]));
            test_queries.push((Query::new(qid, vec![qw]), cands));
        }
    }
    NoiseFixture {
        embeddings: std::sync::Arc::new(emb),
        lexicon,
        train_queries,
        corpus,
        triples,
        test_queries,
        qrels,
    }
}
