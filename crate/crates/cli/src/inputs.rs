//! Loading inputs and assembling per-query candidate pools.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use rankcert::corpus::{fnv1a, load_corpus, load_queries, load_run, Corpus, Document, Query, Tokenizer};
use rankcert::lexicon::{EmbeddingTable, Lexicon};
use rankcert::rankers::{rank, Bm25Model, LinearEmbedScorer, ScoreModel};
use rankcert::smoothing::{MonteCarlo, Smoothing};
use rankcert::Exec;
use serde::Serialize;

use crate::{DataArgs, ModelArgs, RankerKind, SmoothArgs, UsageError};

/// Fails with a usage error unless every given path exists.
pub fn require_files<'a>(paths: impl IntoIterator<Item = (&'a str, Option<&'a PathBuf>)>) -> Result<()> {
    for (flag, path) in paths {
        match path {
            None => return Err(UsageError(format!("--{flag} is required")).into()),
            Some(p) if !p.is_file() => {
                return Err(UsageError(format!("--{flag}: no such file `{}`", p.display())).into());
            }
            Some(_) => {}
        }
    }
    Ok(())
}

pub fn create_out_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating output directory `{}`", out.display()))
}

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing `{}`", path.display()))
}

/// Writes `<command>.config.json` with the arguments and the tool version.
pub fn write_config<T: Serialize>(out: &Path, command: &str, args: &T, jobs: usize) -> Result<()> {
    #[derive(Serialize)]
    struct Echo<'a, T> {
        command: &'a str,
        version: &'a str,
        jobs: usize,
        args: &'a T,
    }
    let echo = Echo { command, version: env!("CARGO_PKG_VERSION"), jobs, args };
    let mut text = serde_json::to_string_pretty(&echo)?;
    text.push('\n');
    write(&out.join(format!("{command}.config.json")), text)
}

pub fn load_embeddings(path: &Path) -> Result<Arc<EmbeddingTable>> {
    let table = EmbeddingTable::load(path).with_context(|| format!("loading embeddings `{}`", path.display()))?;
    Ok(Arc::new(table))
}

pub fn load_lexicon(path: &Path) -> Result<Lexicon> {
    Lexicon::load(path).with_context(|| format!("loading lexicon `{}`", path.display()))
}

pub fn smoothing(args: &SmoothArgs) -> Smoothing {
    if args.exact {
        Smoothing::Exact { cap: args.exact_cap }
    } else {
        Smoothing::MonteCarlo(monte_carlo(args))
    }
}

pub fn monte_carlo(args: &SmoothArgs) -> MonteCarlo {
    MonteCarlo {
        n: args.n_samples,
        alpha: args.alpha,
        seed: args.seed,
    }
}

/// Corpus, queries and the candidate documents of every query, in query id
/// order. Queries without candidates are dropped with a warning.
pub struct Workload {
    pub queries: BTreeMap<String, Query>,
    pub pools: BTreeMap<String, Vec<Document>>,
    bm25: Option<Bm25Model>,
}

impl Workload {
    pub fn load(data: &DataArgs, model: &ModelArgs, exec: Exec) -> Result<Self> {
        require_files([("corpus", Some(&data.corpus)), ("queries", Some(&data.queries))])?;
        if let Some(run) = &data.run {
            require_files([("run", Some(run))])?;
        }
        if data.candidates == 0 {
            return Err(UsageError("--candidates must be at least 1".into()).into());
        }
        let tok = Tokenizer::default();
        let corpus = load_corpus(&data.corpus, &tok).with_context(|| format!("loading corpus `{}`", data.corpus.display()))?;
        let queries = load_queries(&data.queries, &tok).with_context(|| format!("loading queries `{}`", data.queries.display()))?;
        let need_bm25 = data.run.is_none() || model.ranker == RankerKind::Bm25;
        let mut bm25 = if need_bm25 { Some(bm25_stats(&corpus, model.bm25_cache.as_deref())?) } else { None };

        let mut pools = BTreeMap::new();
        match &data.run {
            Some(path) => {
                let run = load_run(path).with_context(|| format!("loading run `{}`", path.display()))?;
                for (qid, list) in run {
                    if !queries.contains_key(&qid) {
                        log::warn!("run lists unknown query `{qid}`; ignored");
                        continue;
                    }
                    let mut docs = Vec::new();
                    for e in list.entries.iter().take(data.candidates) {
                        match corpus.get(&e.doc_id) {
                            Some(d) => docs.push(d.clone()),
                            None => log::warn!("query `{qid}`: document `{}` missing from corpus; dropped", e.doc_id),
                        }
                    }
                    if !docs.is_empty() {
                        pools.insert(qid, docs);
                    }
                }
            }
            None => {
                let all: Vec<Document> = corpus.values().cloned().collect();
                let model = bm25.as_ref().expect("statistics built above");
                for (qid, q) in &queries {
                    let list = rank(model, q, &all, exec);
                    let docs = list
                        .entries
                        .iter()
                        .take(data.candidates)
                        .map(|e| corpus[&e.doc_id].clone())
                        .collect();
                    pools.insert(qid.clone(), docs);
                }
            }
        }
        for qid in queries.keys().filter(|q| !pools.contains_key(*q)) {
            log::warn!("query `{qid}` has no candidates; skipped");
        }
        if pools.is_empty() {
            bail!("no query has any candidate documents");
        }
        if let Some(b) = bm25.as_mut() {
            b.calibrate(pools.iter().map(|(qid, docs)| (&queries[qid], docs.iter().collect())));
        }
        Ok(Workload { queries, pools, bm25 })
    }

    /// `(query, candidates)` in query id order.
    pub fn iter(&self) -> impl Iterator<Item = (&Query, &[Document])> {
        self.pools.iter().map(|(qid, docs)| (&self.queries[qid], docs.as_slice()))
    }

    pub fn base_model(&self, args: &ModelArgs) -> Result<Box<dyn ScoreModel>> {
        match args.ranker {
            RankerKind::Bm25 => Ok(Box::new(self.bm25.clone().expect("statistics built for --ranker bm25"))),
            RankerKind::Linear => {
                require_files([("model", args.model.as_ref()), ("embeddings", args.embeddings.as_ref())])?;
                let emb = load_embeddings(args.embeddings.as_ref().unwrap())?;
                let path = args.model.as_ref().unwrap();
                let model = LinearEmbedScorer::load(path, emb).with_context(|| format!("loading model `{}`", path.display()))?;
                Ok(Box::new(model))
            }
        }
    }
}

fn corpus_hash(corpus: &Corpus) -> u64 {
    let mut bytes = Vec::new();
    for d in corpus.values() {
        bytes.extend_from_slice(d.id.as_bytes());
        bytes.push(0);
        for t in &d.tokens {
            bytes.extend_from_slice(t.as_bytes());
            bytes.push(1);
        }
        bytes.push(2);
    }
    fnv1a(&bytes)
}

fn bm25_stats(corpus: &Corpus, cache: Option<&Path>) -> Result<Bm25Model> {
    let hash = corpus_hash(corpus);
    if let Some(path) = cache {
        if let Some(model) = Bm25Model::load_cached(path, hash)? {
            log::info!("using cached BM25 statistics `{}`", path.display());
            return Ok(model);
        }
    }
    let model = Bm25Model::from_corpus(corpus.values(), Bm25Model::DEFAULT_K1, Bm25Model::DEFAULT_B)?.with_corpus_hash(hash);
    if let Some(path) = cache {
        model.save(path).with_context(|| format!("writing BM25 cache `{}`", path.display()))?;
    }
    Ok(model)
}
