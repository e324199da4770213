//! `rankcert`: build lexicons, train scorers, and certify or attack rankings
//! from the command line.

mod commands;
mod inputs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "rankcert", version, about = "Certified top-K robustness for text rankers")]
struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build synonym and perturbation sets from word embeddings.
    BuildLexicon(BuildLexiconArgs),
    /// Train the linear embedding scorer on pairwise triples.
    Train(TrainArgs),
    /// Re-rank candidates by smoothed score.
    SmoothRank(SmoothRankArgs),
    /// Certify the smoothed top-K of every query.
    Certify(CertifyArgs),
    /// Run word substitution attacks against tail documents.
    Attack(AttackArgs),
    /// Compute CRQ, SR, CondSR and MRR from earlier outputs.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BuildLexiconArgs {
    /// Embedding file: `word v1 v2 ...` per line, optional header.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Cosine threshold for synonyms.
    #[arg(long, default_value_t = rankcert::lexicon::DEFAULT_TAU)]
    pub tau: f64,
    /// Nominal perturbation set size.
    #[arg(long, default_value_t = 4)]
    pub j: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RankerKind {
    Linear,
    Bm25,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// Corpus: JSON lines `{"id", "text"}` or `id<TAB>text`.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Queries: `qid<TAB>text`.
    #[arg(long)]
    pub queries: PathBuf,
    /// Candidate run (TREC or MS MARCO layout); BM25 over the corpus if absent.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Candidates kept per query.
    #[arg(long, default_value_t = 100)]
    pub candidates: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    /// Base ranker.
    #[arg(long, value_enum, default_value_t = RankerKind::Linear)]
    pub ranker: RankerKind,
    /// Trained linear scorer (model.json).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Embeddings used by the linear scorer.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Cache file for BM25 corpus statistics.
    #[arg(long)]
    pub bm25_cache: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SmoothArgs {
    /// Lexicon JSON from `build-lexicon`.
    #[arg(long)]
    pub lexicon: PathBuf,
    /// Monte Carlo samples per estimate.
    #[arg(long, default_value_t = rankcert::smoothing::DEFAULT_SAMPLES)]
    pub n_samples: usize,
    /// Failure probability of each estimate.
    #[arg(long, default_value_t = rankcert::smoothing::DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Enumerate the perturbation space instead of sampling.
    #[arg(long)]
    pub exact: bool,
    /// Largest perturbation space `--exact` will enumerate.
    #[arg(long, default_value_t = rankcert::smoothing::DEFAULT_EXACT_CAP)]
    pub exact_cap: u128,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    /// Triples: `qid<TAB>pos<TAB>neg`.
    #[arg(long)]
    pub triples: PathBuf,
    /// Lexicon for noise; required unless `--no-noise`.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train on clean documents.
    #[arg(long)]
    pub no_noise: bool,
    /// One noised copy per document instead of fresh noise per step.
    #[arg(long)]
    pub static_noise: bool,
    /// Start from `--model` instead of zero weights.
    #[arg(long, requires = "model")]
    pub warm_start: bool,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SmoothRankArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub smooth: SmoothArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub smooth: SmoothArgs,
    /// Depth of the certified top list.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Fraction of words an attacker may replace.
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackTarget {
    /// The Monte Carlo smoothed ranker.
    Smoothed,
    /// The base ranker.
    Base,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMethod {
    Greedy,
    /// Exhaustive search over all admissible documents.
    Brute,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AttackArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub smooth: SmoothArgs,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
    /// Positions the greedy attacker may change (also capped by ⌊delta·M⌋).
    #[arg(long, default_value_t = rankcert::attacker::DEFAULT_GREEDY_BUDGET)]
    pub budget: usize,
    #[arg(long, value_enum, default_value_t = AttackTarget::Smoothed)]
    pub target: AttackTarget,
    #[arg(long, value_enum, default_value_t = AttackMethod::Greedy)]
    pub method: AttackMethod,
    /// Largest adversarial set `--method brute` will enumerate.
    #[arg(long, default_value_t = rankcert::attacker::DEFAULT_ENUM_CAP)]
    pub enum_cap: u128,
    /// Attack only the first M documents below rank K (0 = all).
    #[arg(long, default_value_t = 0)]
    pub max_attacked: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateArgs {
    /// certificates.jsonl from `certify`.
    #[arg(long)]
    pub certificates: PathBuf,
    /// attacks.jsonl from `attack`.
    #[arg(long)]
    pub attacks: PathBuf,
    /// Run to score with MRR (e.g. smoothed.run).
    #[arg(long, requires = "qrels")]
    pub run: Option<PathBuf>,
    /// Relevance judgements: `qid iter docid rel`.
    #[arg(long)]
    pub qrels: Option<PathBuf>,
    /// MRR cutoffs.
    #[arg(long, value_delimiter = ',', default_value = "10")]
    pub cutoffs: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Errors that map to exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let jobs = cli.jobs;
    let result = rankcert::exec::with_jobs(jobs, move || commands::run(cli.command, jobs));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
