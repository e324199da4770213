//! Top-K certification of the smoothed ranker.
//!
//! For any `d' ∈ S_d`, `f̄(q, d') ≤ min(f̄(q, d) + o_d, 1)` where
//! `o_d = 1 − ∏ o_w` over the `E` positions of `d` with the smallest
//! per-word overlap. A ranked list is certified top-K robust when
//!
//! ```text
//! ΔL_q = f̄(q, d_K) − f̄(q, d_{K+1}) − max_{d ∈ L[K+1:]} o_d > 0
//! ```
//!
//! with Monte Carlo estimates entering through their confidence bounds.
//!
//! The module also carries the pieces of the bound's derivation as
//! executable checks: the closed form of `∫(dΠ_{d'} − λ dΠ_d)_+`, the worst
//! document `d*`, and a ranker that attains the bound.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, Query, RankedList};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::lexicon::Lexicon;
use crate::rankers::ScoreModel;
use crate::smoothing::{decode, smoothed_rank, space_size, Smoothing};

/// `E = ⌊δ·M⌋`, guarded against round-off such as `0.7 * 10 = 7.000…01`.
pub fn attack_budget(delta: f64, len: usize) -> usize {
    (delta * len as f64 + 1e-9).floor() as usize
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("delta must lie in (0, 1], got {delta}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocOverlapBound {
    pub doc_id: String,
    /// `o_w` for every position, ascending.
    pub sorted_overlaps: Vec<f64>,
    /// Number of positions the attacker may change, capped by the number of
    /// positions that have any synonym.
    pub e: usize,
    pub o_d: f64,
}

pub fn doc_overlap_bound(d: &Document, lexicon: &Lexicon, delta: f64) -> Result<DocOverlapBound> {
    check_delta(delta)?;
    let mut sorted: Vec<f64> = d.tokens.iter().map(|w| lexicon.word_overlap(w)).collect();
    sorted.sort_by(f64::total_cmp);
    let attackable = d.tokens.iter().filter(|w| lexicon.synonyms(w).len() > 1).count();
    let e = attack_budget(delta, d.len()).min(attackable);
    let kept: f64 = sorted[..e].iter().product();
    Ok(DocOverlapBound {
        doc_id: d.id.clone(),
        sorted_overlaps: sorted,
        e,
        o_d: 1.0 - kept,
    })
}

/// `min(f̄ + o_d, 1)`.
pub fn certified_upper_bound(fbar: f64, o_d: f64) -> f64 {
    (fbar + o_d).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifyParams {
    pub k: usize,
    pub delta: f64,
    pub smoothing: Smoothing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocOd {
    pub doc_id: String,
    pub o_d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub query_id: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub delta: f64,
    /// `"exact"` or `"monte_carlo"`.
    pub smoothing: String,
    /// Samples per estimate; `None` for exact smoothing.
    pub n: Option<usize>,
    pub alpha: Option<f64>,
    #[serde(rename = "docK")]
    pub doc_k: String,
    #[serde(rename = "docK1")]
    pub doc_k1: String,
    #[serde(rename = "fbarK")]
    pub fbar_k: f64,
    #[serde(rename = "fbarK1")]
    pub fbar_k1: f64,
    /// Confidence radius of each of the two estimates.
    pub radius: f64,
    pub max_od: f64,
    #[serde(rename = "delta_Lq")]
    pub delta_lq: f64,
    pub certified: bool,
    /// `o_d` for every document below rank K.
    pub per_doc_od: Vec<DocOd>,
}

/// Certifies the smoothed list `ranked` (`L_q^s`) at depth `K`.
///
/// `f̄` at ranks K and K+1 is re-estimated with `params.smoothing`; with the
/// seeding scheme of [`crate::smoothing`] this reproduces the values the list
/// was sorted by. ΔL_q subtracts both confidence radii.
pub fn certify_topk<M: ScoreModel + ?Sized>(
    model: &M,
    lexicon: &Lexicon,
    query: &Query,
    ranked: &RankedList,
    docs: &Corpus,
    params: &CertifyParams,
    exec: Exec,
) -> Result<CertificateReport> {
    check_delta(params.delta)?;
    let n = ranked.len();
    if params.k == 0 || params.k >= n {
        return Err(Error::InvalidParameter(format!(
            "K must satisfy 1 <= K < N (K = {}, N = {n}) for query `{}`",
            params.k, query.id
        )));
    }
    let lookup = |id: &str| docs.get(id).ok_or_else(|| Error::MissingDocument(id.to_string()));
    let dk = lookup(&ranked.entries[params.k - 1].doc_id)?;
    let dk1 = lookup(&ranked.entries[params.k].doc_id)?;
    let tail: Vec<&Document> = ranked.entries[params.k..]
        .iter()
        .map(|e| lookup(&e.doc_id))
        .collect::<Result<_>>()?;

    let fk = params.smoothing.estimate(model, lexicon, query, dk, exec)?;
    let fk1 = params.smoothing.estimate(model, lexicon, query, dk1, exec)?;
    let bounds = exec.map(&tail, |d| doc_overlap_bound(d, lexicon, params.delta));
    let mut per_doc_od = Vec::with_capacity(tail.len());
    let mut max_od = 0.0f64;
    for b in bounds {
        let b = b?;
        max_od = max_od.max(b.o_d);
        per_doc_od.push(DocOd {
            doc_id: b.doc_id,
            o_d: b.o_d,
        });
    }
    let delta_lq = fk.lower() - fk1.upper() - max_od;
    let (kind, n_samples, alpha) = match params.smoothing {
        Smoothing::Exact { .. } => ("exact", None, None),
        Smoothing::MonteCarlo(mc) => ("monte_carlo", Some(mc.n), Some(mc.alpha)),
    };
    Ok(CertificateReport {
        query_id: query.id.clone(),
        k: params.k,
        delta: params.delta,
        smoothing: kind.to_string(),
        n: n_samples,
        alpha,
        doc_k: dk.id.clone(),
        doc_k1: dk1.id.clone(),
        fbar_k: fk.mean,
        fbar_k1: fk1.mean,
        radius: fk.radius.max(fk1.radius),
        max_od,
        delta_lq,
        certified: delta_lq > 0.0,
        per_doc_od,
    })
}

/// Builds `L_q^s` from the candidates and certifies it.
pub fn certify_query<M: ScoreModel + ?Sized>(
    model: &M,
    lexicon: &Lexicon,
    query: &Query,
    candidates: &[&Document],
    params: &CertifyParams,
    exec: Exec,
) -> Result<(RankedList, CertificateReport)> {
    let smoothed = smoothed_rank(model, lexicon, query, candidates, &params.smoothing, exec)?;
    let docs: Corpus = candidates.iter().map(|d| (d.id.clone(), (*d).clone())).collect();
    let report = certify_topk(model, lexicon, query, &smoothed.list, &docs, params, exec)?;
    Ok((smoothed.list, report))
}

/// Closed form of `∫ (dΠ_{d'} − λ dΠ_d)_+`:
/// `1 − P + P·(1 − λQ)_+` with `P = ∏ n_{w,w'}/n_{w'}` and
/// `Q = ∏ n_{w'}/n_w` over the positions where `d` and `d'` differ.
pub fn lemma42_closed_form(d: &[String], d_prime: &[String], lambda: f64, lexicon: &Lexicon) -> Result<f64> {
    if d.len() != d_prime.len() {
        return Err(Error::LengthMismatch {
            left: d.len(),
            right: d_prime.len(),
        });
    }
    let mut p = 1.0;
    let mut q = 1.0;
    for (w, v) in d.iter().zip(d_prime).filter(|(w, v)| w != v) {
        let n_w = lexicon.perturbation_set(w).len() as f64;
        let n_v = lexicon.perturbation_set(v).len() as f64;
        let shared = lexicon.shared_perturbations(w, v) as f64;
        p *= shared / n_v;
        q *= n_v / n_w;
    }
    Ok(1.0 - p + p * (1.0 - lambda * q).max(0.0))
}

/// The synonym of `w` minimising `|T_w ∩ T_w'| / |T_w|`, ties by token order.
pub fn least_overlapping_synonym<'a>(w: &'a String, lexicon: &'a Lexicon) -> (&'a String, f64) {
    let n_w = lexicon.perturbation_set(w).len() as f64;
    lexicon
        .synonyms(w)
        .iter()
        .map(|s| (s, lexicon.shared_perturbations(w, s) as f64 / n_w))
        .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)))
        .unwrap_or((w, 1.0))
}

/// `d*`: the `E` positions with the smallest overlap (ties by position)
/// replaced by their least-overlapping synonyms.
pub fn optimal_adversary(d: &Document, delta: f64, lexicon: &Lexicon) -> Result<Document> {
    let e = doc_overlap_bound(d, lexicon, delta)?.e;
    let mut choices: Vec<(usize, &String, f64)> = d
        .tokens
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let (s, r) = least_overlapping_synonym(w, lexicon);
            (i, s, r)
        })
        .collect();
    choices.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)));
    let mut tokens = d.tokens.clone();
    for (i, s, _) in choices.into_iter().take(e) {
        tokens[i] = s.clone();
    }
    Ok(Document::new(d.id.clone(), tokens))
}

fn in_support(lexicon: &Lexicon, center: &[String], r: &[String]) -> bool {
    center
        .iter()
        .zip(r)
        .all(|(w, x)| lexicon.perturbation_set(w).contains(x))
}

/// A 0/1 ranker whose smoothed score at `d` is `p` and whose best smoothed
/// score over `S_d` is `min(p + o_d, 1)`.
///
/// With `T_d`, `T_{d*}` the supports of `Π_d`, `Π_{d*}`, it scores 1 exactly
/// on `U ∪ (T_{d*} − T_d)` where `U ⊆ T_d`, `|U| = p·|T_d|`, and `U` lies
/// inside `T_d ∩ T_{d*}` when `p ≤ 1 − o_d` and contains it otherwise.
#[derive(Debug, Clone)]
pub struct TightnessRanker {
    lexicon: Lexicon,
    d: Vec<String>,
    d_star: Vec<String>,
    selected: HashSet<Vec<String>>,
    achieved_p: f64,
    o_d: f64,
}

impl TightnessRanker {
    /// `p_r` is rounded to the nearest multiple of `1/|T_d|`; see
    /// [`TightnessRanker::achieved_p`].
    pub fn build(d: &Document, delta: f64, p_r: f64, lexicon: &Lexicon, cap: u128) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_r) {
            return Err(Error::InvalidParameter(format!("p_r must lie in [0, 1], got {p_r}")));
        }
        let size = space_size(lexicon, &d.tokens);
        if size > cap {
            return Err(Error::SpaceTooLarge { size, cap });
        }
        let d_star = optimal_adversary(d, delta, lexicon)?.tokens;
        let sets: Vec<&[String]> = d.tokens.iter().map(|w| lexicon.perturbation_set(w)).collect();
        let n = size as usize;
        let (inside, outside): (Vec<Vec<String>>, Vec<Vec<String>>) =
            (0..n).map(|i| decode(&sets, i)).partition(|r| in_support(lexicon, &d_star, r));
        let k = ((p_r * n as f64).round() as usize).min(n);
        let selected: HashSet<Vec<String>> = if k <= inside.len() {
            inside.iter().take(k).cloned().collect()
        } else {
            inside
                .iter()
                .cloned()
                .chain(outside.iter().take(k - inside.len()).cloned())
                .collect()
        };
        Ok(TightnessRanker {
            lexicon: lexicon.clone(),
            d: d.tokens.clone(),
            d_star,
            selected,
            achieved_p: k as f64 / n as f64,
            o_d: 1.0 - inside.len() as f64 / n as f64,
        })
    }

    pub fn achieved_p(&self) -> f64 {
        self.achieved_p
    }

    /// `|T_d − T_{d*}| / |T_d|`.
    pub fn o_d(&self) -> f64 {
        self.o_d
    }

    pub fn d_star(&self) -> &[String] {
        &self.d_star
    }

    /// `min(p + o_d, 1)`.
    pub fn target(&self) -> f64 {
        certified_upper_bound(self.achieved_p, self.o_d)
    }
}

impl ScoreModel for TightnessRanker {
    fn score(&self, _query: &Query, tokens: &[String]) -> f64 {
        if tokens.len() != self.d.len() {
            return 0.0;
        }
        let hit = self.selected.contains(tokens)
            || (in_support(&self.lexicon, &self.d_star, tokens) && !in_support(&self.lexicon, &self.d, tokens));
        if hit {
            1.0
        } else {
            0.0
        }
    }
}

/// `tightness_ranker` under its operation name.
pub fn tightness_ranker(d: &Document, delta: f64, p_r: f64, lexicon: &Lexicon, cap: u128) -> Result<TightnessRanker> {
    TightnessRanker::build(d, delta, p_r, lexicon, cap)
}
