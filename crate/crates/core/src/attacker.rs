//! Word substitution attacks: exhaustive search over `S_d` for small
//! instances and a greedy score-maximising attacker.
//!
//! `S_d` holds every document within Hamming distance `⌊δ·M⌋` of `d` whose
//! changed positions carry a synonym of the original word.

use serde::{Deserialize, Serialize};

use crate::certification::attack_budget;
use crate::corpus::{Document, Query, RankedList};
use crate::error::{Error, Result};
use crate::exec::{Exec, CHUNK};
use crate::lexicon::Lexicon;
use crate::rankers::ScoreModel;

pub const DEFAULT_ENUM_CAP: u128 = 1_000_000;
pub const DEFAULT_GREEDY_BUDGET: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Substitution {
    pub position: usize,
    pub old: String,
    pub new: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub query_id: String,
    pub doc_id: String,
    pub original_rank: usize,
    pub best_rank_after: usize,
    pub original_score: f64,
    pub best_score: f64,
    pub best_doc: Vec<String>,
    pub success: bool,
    pub substitutions: Vec<Substitution>,
}

/// `|S_d|`, saturating.
pub fn count_sd(d: &Document, delta: f64, lexicon: &Lexicon) -> u128 {
    let e = attack_budget(delta, d.len());
    // elementary symmetric polynomials of the per-position alternative counts
    let mut poly = vec![0u128; e + 1];
    poly[0] = 1;
    for w in &d.tokens {
        let alts = (lexicon.synonyms(w).len() - 1) as u128;
        if alts == 0 {
            continue;
        }
        for k in (1..=e).rev() {
            poly[k] = poly[k].saturating_add(poly[k - 1].saturating_mul(alts));
        }
    }
    poly.into_iter().fold(0u128, u128::saturating_add)
}

/// Iterator over `S_d`: the identity first, then single substitutions,
/// then pairs, and so on.
pub struct SdIter<'a> {
    base: Vec<String>,
    choices: Vec<(usize, Vec<&'a String>)>,
    max_k: usize,
    combo: Vec<usize>,
    digits: Vec<usize>,
    done: bool,
}

impl<'a> SdIter<'a> {
    fn advance(&mut self) {
        for j in (0..self.combo.len()).rev() {
            self.digits[j] += 1;
            if self.digits[j] < self.choices[self.combo[j]].1.len() {
                return;
            }
            self.digits[j] = 0;
        }
        let n = self.choices.len();
        let k = self.combo.len();
        if let Some(i) = (0..k).rev().find(|&i| self.combo[i] < n - k + i) {
            self.combo[i] += 1;
            for j in i + 1..k {
                self.combo[j] = self.combo[j - 1] + 1;
            }
            return;
        }
        let k = k + 1;
        if k > self.max_k {
            self.done = true;
        } else {
            self.combo = (0..k).collect();
            self.digits = vec![0; k];
        }
    }
}

impl Iterator for SdIter<'_> {
    type Item = Vec<String>;

    fn next(&mut self) -> Option<Vec<String>> {
        if self.done {
            return None;
        }
        let mut out = self.base.clone();
        for (&c, &digit) in self.combo.iter().zip(&self.digits) {
            let (pos, alts) = &self.choices[c];
            out[*pos] = alts[digit].clone();
        }
        self.advance();
        Some(out)
    }
}

pub fn enumerate_sd<'a>(d: &'a Document, delta: f64, lexicon: &'a Lexicon, cap: u128) -> Result<SdIter<'a>> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidParameter(format!("delta must lie in (0, 1], got {delta}")));
    }
    let size = count_sd(d, delta, lexicon);
    if size > cap {
        return Err(Error::SpaceTooLarge { size, cap });
    }
    let choices: Vec<(usize, Vec<&String>)> = d
        .tokens
        .iter()
        .enumerate()
        .filter_map(|(i, w)| {
            let alts: Vec<&String> = lexicon.synonyms(w).iter().filter(|s| *s != w).collect();
            (!alts.is_empty()).then_some((i, alts))
        })
        .collect();
    let max_k = attack_budget(delta, d.len()).min(choices.len());
    Ok(SdIter {
        base: d.tokens.clone(),
        choices,
        max_k,
        combo: Vec::new(),
        digits: Vec::new(),
        done: false,
    })
}

fn substitutions(original: &[String], attacked: &[String]) -> Vec<Substitution> {
    original
        .iter()
        .zip(attacked)
        .enumerate()
        .filter(|(_, (a, b))| a != b)
        .map(|(position, (a, b))| Substitution {
            position,
            old: a.clone(),
            new: b.clone(),
        })
        .collect()
}

fn outcome(
    query: &Query,
    d: &Document,
    ranked: &RankedList,
    original_score: f64,
    best_score: f64,
    best: Vec<String>,
) -> AttackOutcome {
    let original_rank = ranked.rank_with_score(&d.id, original_score);
    let best_rank_after = ranked.rank_with_score(&d.id, best_score);
    AttackOutcome {
        query_id: query.id.clone(),
        doc_id: d.id.clone(),
        original_rank,
        best_rank_after,
        original_score,
        best_score,
        substitutions: substitutions(&d.tokens, &best),
        best_doc: best,
        success: best_rank_after < original_rank,
    }
}

/// Scores every member of `S_d` with `scorer` and keeps the best (the
/// earliest in enumeration order on ties). Ranks are computed against the
/// other entries of `ranked`, with the target re-scored by `scorer`.
#[allow(clippy::too_many_arguments)]
pub fn brute_force_attack<S: ScoreModel + ?Sized>(
    scorer: &S,
    query: &Query,
    d: &Document,
    ranked: &RankedList,
    delta: f64,
    lexicon: &Lexicon,
    cap: u128,
    exec: Exec,
) -> Result<AttackOutcome> {
    let mut iter = enumerate_sd(d, delta, lexicon, cap)?;
    let original_score = scorer.score(query, &d.tokens);
    let mut best_score = original_score;
    let mut best = d.tokens.clone();
    // the identity was scored above
    iter.next();
    loop {
        let batch: Vec<Vec<String>> = iter.by_ref().take(CHUNK).collect();
        if batch.is_empty() {
            break;
        }
        let scores = exec.map(&batch, |c| scorer.score(query, c));
        for (cand, s) in batch.into_iter().zip(scores) {
            if s > best_score {
                best_score = s;
                best = cand;
            }
        }
    }
    Ok(outcome(query, d, ranked, original_score, best_score, best))
}

/// Repeatedly applies the single (position, synonym) substitution with the
/// largest score gain, changing each position at most once, until `budget`
/// positions are used or nothing improves. Ties go to the lower position,
/// then the lexicographically smaller word.
pub fn greedy_attack<S: ScoreModel + ?Sized>(
    scorer: &S,
    query: &Query,
    d: &Document,
    ranked: &RankedList,
    budget: usize,
    lexicon: &Lexicon,
    exec: Exec,
) -> Result<AttackOutcome> {
    if budget == 0 {
        return Err(Error::InvalidParameter("greedy budget must be at least 1".into()));
    }
    let original_score = scorer.score(query, &d.tokens);
    let mut current = d.tokens.clone();
    let mut current_score = original_score;
    let mut used = vec![false; d.len()];
    for _ in 0..budget {
        let moves: Vec<(usize, &String)> = d
            .tokens
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .flat_map(|(i, w)| lexicon.synonyms(w).iter().filter(move |s| *s != w).map(move |s| (i, s)))
            .collect();
        if moves.is_empty() {
            break;
        }
        let scores = exec.map(&moves, |(i, s)| {
            let mut cand = current.clone();
            cand[*i] = (*s).clone();
            scorer.score(query, &cand)
        });
        let mut pick: Option<(usize, f64)> = None;
        for (m, &s) in scores.iter().enumerate() {
            if pick.is_none_or(|(_, b)| s > b) {
                pick = Some((m, s));
            }
        }
        let Some((m, s)) = pick else { break };
        if s <= current_score {
            break;
        }
        let (i, w) = moves[m];
        current[i] = w.clone();
        used[i] = true;
        current_score = s;
    }
    Ok(outcome(query, d, ranked, original_score, current_score, current))
}
