use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rankcert::attacker::{brute_force_attack, greedy_attack, AttackOutcome};
use rankcert::certification::{attack_budget, certify_query, CertificateReport, CertifyParams};
use rankcert::corpus::{format_run, load_qrels, load_queries, load_run, load_triples, load_corpus, Document, Query, RankedList, Tokenizer};
use rankcert::lexicon::{Lexicon, PerturbDict, SynonymDict};
use rankcert::metrics::{crq, sr, EvalSummary};
use rankcert::rankers::{rank, LinearEmbedScorer, ScoreModel};
use rankcert::smoothing::{smoothed_rank, ExactSmoothed, MonteCarloSmoothed};
use rankcert::trainer::{format_loss_trace, pairwise_accuracy, train, TrainConfig};
use rankcert::Exec;
use serde::Serialize;

use crate::inputs::{self, create_out_dir, require_files, write, write_config, Workload};
use crate::*;

pub fn run(command: Command, jobs: usize) -> Result<()> {
    let exec = Exec::default();
    match command {
        Command::BuildLexicon(a) => build_lexicon(&a, jobs, exec),
        Command::Train(a) => train_cmd(&a, jobs),
        Command::SmoothRank(a) => smooth_rank(&a, jobs, exec),
        Command::Certify(a) => certify(&a, jobs, exec),
        Command::Attack(a) => attack(&a, jobs, exec),
        Command::Evaluate(a) => evaluate(&a, jobs),
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn check_k_delta(k: usize, delta: f64) -> Result<()> {
    if k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(usage(format!("--delta must lie in (0, 1], got {delta}")));
    }
    Ok(())
}

fn check_smoothing(s: &SmoothArgs) -> Result<()> {
    if !s.exact && s.n_samples == 0 {
        return Err(usage("--n-samples must be at least 1"));
    }
    if !(s.alpha > 0.0 && s.alpha < 1.0) {
        return Err(usage(format!("--alpha must lie in (0, 1), got {}", s.alpha)));
    }
    Ok(())
}

fn jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    Ok(out)
}

#[derive(Serialize)]
struct Skipped<'a> {
    query_id: &'a str,
    reason: String,
}

fn build_lexicon(a: &BuildLexiconArgs, jobs: usize, exec: Exec) -> Result<()> {
    require_files([("embeddings", Some(&a.embeddings))])?;
    if a.j == 0 {
        return Err(usage("--j must be at least 1"));
    }
    if !(a.tau > -1.0 && a.tau <= 1.0) {
        return Err(usage(format!("--tau must lie in (-1, 1], got {}", a.tau)));
    }
    let emb = inputs::load_embeddings(&a.embeddings)?;
    let lexicon = Lexicon::build(&emb, a.tau, a.j, exec)?;
    let report = lexicon.validate();
    if !report.is_admissible() {
        bail!("lexicon failed validation: {:?}", report.violations);
    }
    create_out_dir(&a.out)?;
    lexicon.save(a.out.join("lexicon.json"))?;
    write_config(&a.out, "build-lexicon", a, jobs)?;
    let pert = lexicon.perturb_dict();
    let words = pert.iter().count();
    let perturbable = pert.iter().filter(|(w, _)| pert.is_perturbable(w)).count();
    let with_synonyms = lexicon.synonym_dict().iter().filter(|(_, s)| s.len() > 1).count();
    println!("words: {words}, with synonyms: {with_synonyms}, perturbable: {perturbable}");
    Ok(())
}

fn empty_lexicon() -> Result<Lexicon> {
    let none: [(String, Vec<String>); 0] = [];
    Ok(Lexicon::from_parts(SynonymDict::from_sets(none.clone()), PerturbDict::from_sets(1, none))?)
}

fn train_cmd(a: &TrainArgs, jobs: usize) -> Result<()> {
    require_files([
        ("embeddings", Some(&a.embeddings)),
        ("corpus", Some(&a.corpus)),
        ("queries", Some(&a.queries)),
        ("triples", Some(&a.triples)),
    ])?;
    if !a.no_noise {
        require_files([("lexicon", a.lexicon.as_ref())])?;
    }
    if a.warm_start {
        require_files([("model", a.model.as_ref())])?;
    }
    if a.epochs == 0 {
        return Err(usage("--epochs must be at least 1"));
    }
    if !(a.learning_rate >= 0.0 && a.learning_rate.is_finite()) {
        return Err(usage("--learning-rate must be finite and non-negative"));
    }
    let emb = inputs::load_embeddings(&a.embeddings)?;
    let tok = Tokenizer::default();
    let corpus = load_corpus(&a.corpus, &tok).with_context(|| format!("loading corpus `{}`", a.corpus.display()))?;
    let queries = load_queries(&a.queries, &tok).with_context(|| format!("loading queries `{}`", a.queries.display()))?;
    let triples = load_triples(&a.triples).with_context(|| format!("loading triples `{}`", a.triples.display()))?;
    let lexicon = match (&a.lexicon, a.no_noise) {
        (Some(p), false) => inputs::load_lexicon(p)?,
        _ => empty_lexicon()?,
    };
    let init = if a.warm_start {
        let p = a.model.as_ref().unwrap();
        LinearEmbedScorer::load(p, emb.clone()).with_context(|| format!("loading model `{}`", p.display()))?
    } else {
        LinearEmbedScorer::zeros(emb.clone())
    };
    let cfg = TrainConfig {
        epochs: a.epochs,
        learning_rate: a.learning_rate,
        seed: a.seed,
        noise_enabled: !a.no_noise,
        static_noise: a.static_noise,
        ..TrainConfig::default()
    };
    let out = train(init, &triples, &queries, &corpus, &lexicon, &cfg)?;
    create_out_dir(&a.out)?;
    out.model.save(a.out.join("model.json"))?;
    write(&a.out.join("loss_trace.csv"), format_loss_trace(&out.loss_trace))?;
    write_config(&a.out, "train", a, jobs)?;
    let acc = pairwise_accuracy(&out.model, &triples, &queries, &corpus)?;
    println!(
        "epochs: {}, final loss: {:.6}, clean pairwise accuracy: {:.4}",
        out.loss_trace.len(),
        out.loss_trace.last().copied().unwrap_or(f64::NAN),
        acc
    );
    Ok(())
}

fn smooth_rank(a: &SmoothRankArgs, jobs: usize, exec: Exec) -> Result<()> {
    check_smoothing(&a.smooth)?;
    require_files([("lexicon", Some(&a.smooth.lexicon))])?;
    let work = Workload::load(&a.data, &a.model, exec)?;
    let model = work.base_model(&a.model)?;
    let lexicon = inputs::load_lexicon(&a.smooth.lexicon)?;
    let smoothing = inputs::smoothing(&a.smooth);
    let pools: Vec<(&Query, &[Document])> = work.iter().collect();
    let ranked = exec.map(&pools, |(q, docs)| {
        let refs: Vec<&Document> = docs.iter().collect();
        smoothed_rank(&*model, &lexicon, q, &refs, &smoothing, exec)
    });
    let mut lists = Vec::new();
    for ((q, _), res) in pools.iter().zip(ranked) {
        match res {
            Ok(s) => lists.push(s.list),
            Err(e) => log::warn!("query `{}` skipped: {e}", q.id),
        }
    }
    if lists.is_empty() {
        bail!("no query could be smoothed");
    }
    create_out_dir(&a.out)?;
    write(&a.out.join("smoothed.run"), format_run(&lists, "smoothed"))?;
    write_config(&a.out, "smooth-rank", a, jobs)?;
    println!("smoothed {} queries", lists.len());
    Ok(())
}

fn certify(a: &CertifyArgs, jobs: usize, exec: Exec) -> Result<()> {
    check_k_delta(a.k, a.delta)?;
    check_smoothing(&a.smooth)?;
    require_files([("lexicon", Some(&a.smooth.lexicon))])?;
    let work = Workload::load(&a.data, &a.model, exec)?;
    let model = work.base_model(&a.model)?;
    let lexicon = inputs::load_lexicon(&a.smooth.lexicon)?;
    let params = CertifyParams { k: a.k, delta: a.delta, smoothing: inputs::smoothing(&a.smooth) };
    let pools: Vec<(&Query, &[Document])> = work.iter().collect();
    let results = exec.map(&pools, |(q, docs)| {
        if a.k >= docs.len() {
            return Err(format!("K = {} but only {} candidates", a.k, docs.len()));
        }
        let refs: Vec<&Document> = docs.iter().collect();
        certify_query(&*model, &lexicon, q, &refs, &params, exec)
            .map(|(_, r)| r)
            .map_err(|e| e.to_string())
    });
    let mut reports = Vec::new();
    let mut skipped = Vec::new();
    for ((q, _), res) in pools.iter().zip(results) {
        match res {
            Ok(r) => reports.push(r),
            Err(reason) => {
                log::warn!("query `{}` skipped: {reason}", q.id);
                skipped.push(Skipped { query_id: &q.id, reason });
            }
        }
    }
    if reports.is_empty() {
        bail!("no query could be certified ({} skipped; first reason: {})", skipped.len(), skipped.first().map_or("-", |s| s.reason.as_str()));
    }
    create_out_dir(&a.out)?;
    write(&a.out.join("certificates.jsonl"), jsonl(&reports)?)?;
    write(&a.out.join("certify.skipped.jsonl"), jsonl(&skipped)?)?;
    write_config(&a.out, "certify", a, jobs)?;
    let certified = reports.iter().filter(|r| r.certified).count();
    println!(
        "CRQ: {:.2}% ({certified}/{} certified, {} skipped)",
        crq(&reports)?,
        reports.len(),
        skipped.len()
    );
    Ok(())
}

fn attack(a: &AttackArgs, jobs: usize, exec: Exec) -> Result<()> {
    check_k_delta(a.k, a.delta)?;
    check_smoothing(&a.smooth)?;
    if a.budget == 0 {
        return Err(usage("--budget must be at least 1"));
    }
    require_files([("lexicon", Some(&a.smooth.lexicon))])?;
    let work = Workload::load(&a.data, &a.model, exec)?;
    let base = work.base_model(&a.model)?;
    let lexicon = inputs::load_lexicon(&a.smooth.lexicon)?;
    let target: Box<dyn ScoreModel + '_> = match (a.target, a.smooth.exact) {
        (AttackTarget::Base, _) => Box::new(&*base),
        (AttackTarget::Smoothed, true) => Box::new(ExactSmoothed { model: &*base, lexicon: &lexicon, exec }),
        (AttackTarget::Smoothed, false) => Box::new(MonteCarloSmoothed {
            model: &*base,
            lexicon: &lexicon,
            mc: inputs::monte_carlo(&a.smooth),
            exec,
        }),
    };
    let pools: Vec<(&Query, &[Document])> = work.iter().collect();
    let results = exec.map(&pools, |(q, docs)| -> std::result::Result<Vec<AttackOutcome>, String> {
        if a.k >= docs.len() {
            return Err(format!("K = {} but only {} candidates", a.k, docs.len()));
        }
        let ranked = rank(&*target, q, docs, exec);
        let limit = if a.max_attacked == 0 { usize::MAX } else { a.max_attacked };
        let by_id: BTreeMap<&str, &Document> = docs.iter().map(|d| (d.id.as_str(), d)).collect();
        let tail: Vec<&Document> = ranked.entries[a.k..].iter().take(limit).map(|e| by_id[e.doc_id.as_str()]).collect();
        tail.iter()
            .map(|d| match a.method {
                AttackMethod::Greedy => match a.budget.min(attack_budget(a.delta, d.len())) {
                    // no substitution allowed: S_d = {d}
                    0 => brute_force_attack(&*target, q, d, &ranked, a.delta, &lexicon, 1, exec),
                    e => greedy_attack(&*target, q, d, &ranked, e, &lexicon, exec),
                },
                AttackMethod::Brute => brute_force_attack(&*target, q, d, &ranked, a.delta, &lexicon, a.enum_cap, exec),
            })
            .collect::<rankcert::Result<Vec<_>>>()
            .map_err(|e| e.to_string())
    });
    let mut outcomes = Vec::new();
    let mut skipped = Vec::new();
    for ((q, _), res) in pools.iter().zip(results) {
        match res {
            Ok(o) => outcomes.extend(o),
            Err(reason) => {
                log::warn!("query `{}` skipped: {reason}", q.id);
                skipped.push(Skipped { query_id: &q.id, reason });
            }
        }
    }
    if outcomes.is_empty() {
        bail!("no document could be attacked ({} queries skipped)", skipped.len());
    }
    create_out_dir(&a.out)?;
    write(&a.out.join("attacks.jsonl"), jsonl(&outcomes)?)?;
    write(&a.out.join("attack.skipped.jsonl"), jsonl(&skipped)?)?;
    write_config(&a.out, "attack", a, jobs)?;
    let wins = outcomes.iter().filter(|o| o.success).count();
    println!("SR: {:.2}% ({wins}/{} documents promoted, {} queries skipped)", sr(&outcomes)?, outcomes.len(), skipped.len());
    Ok(())
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading `{}`", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}: malformed record", path.display(), i + 1)))
        .collect()
}

fn evaluate(a: &EvaluateArgs, jobs: usize) -> Result<()> {
    require_files([("certificates", Some(&a.certificates)), ("attacks", Some(&a.attacks))])?;
    if let Some(run) = &a.run {
        require_files([("run", Some(run)), ("qrels", a.qrels.as_ref())])?;
    }
    if a.cutoffs.contains(&0) {
        return Err(usage("MRR cutoffs must be at least 1"));
    }
    let reports: Vec<CertificateReport> = read_jsonl(&a.certificates)?;
    let outcomes: Vec<AttackOutcome> = read_jsonl(&a.attacks)?;
    let cert_q: BTreeSet<&str> = reports.iter().map(|r| r.query_id.as_str()).collect();
    let att_q: BTreeSet<&str> = outcomes.iter().map(|o| o.query_id.as_str()).collect();
    if cert_q != att_q {
        let mut msg = String::from("certificates and attacks cover different queries");
        let only_c: Vec<&&str> = cert_q.difference(&att_q).collect();
        let only_a: Vec<&&str> = att_q.difference(&cert_q).collect();
        if !only_c.is_empty() {
            let _ = write!(msg, "; only in certificates: {only_c:?}");
        }
        if !only_a.is_empty() {
            let _ = write!(msg, "; only in attacks: {only_a:?}");
        }
        bail!(msg);
    }
    let run_and_qrels: Option<(BTreeMap<String, RankedList>, BTreeMap<String, BTreeSet<String>>)> = match (&a.run, &a.qrels) {
        (Some(r), Some(q)) => Some((load_run(r)?, load_qrels(q)?)),
        _ => None,
    };
    let summary = EvalSummary::compute(
        &reports,
        &outcomes,
        run_and_qrels.as_ref().map(|(r, q)| (r, q)),
        &a.cutoffs,
    )?;
    create_out_dir(&a.out)?;
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    write(&a.out.join("summary.json"), text)?;
    write_config(&a.out, "evaluate", a, jobs)?;
    print!("{}", summary.table());
    Ok(())
}
