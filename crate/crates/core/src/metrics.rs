//! Evaluation metrics: certified robust query percentage (CRQ), attack
//! success rate (SR), success rate restricted to certified queries (CondSR),
//! and MRR@k.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Serialize, Serializer};

use crate::attacker::AttackOutcome;
use crate::certification::CertificateReport;
use crate::corpus::RankedList;
use crate::error::{Error, Result};

/// `100 · |{q : ΔL_q > 0}| / |Q|`.
pub fn crq(reports: &[CertificateReport]) -> Result<f64> {
    if reports.is_empty() {
        return Err(Error::InvalidParameter("CRQ needs at least one report".into()));
    }
    let certified = reports.iter().filter(|r| r.certified).count();
    Ok(100.0 * certified as f64 / reports.len() as f64)
}

/// `100 · successes / attacked documents`.
pub fn sr(outcomes: &[AttackOutcome]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::InvalidParameter("SR needs at least one attack outcome".into()));
    }
    let wins = outcomes.iter().filter(|o| o.success).count();
    Ok(100.0 * wins as f64 / outcomes.len() as f64)
}

/// Mean over certified queries of the fraction of attacked documents whose
/// rank strictly improved, times 100. `None` when no query with attack
/// outcomes is certified.
pub fn cond_sr(reports: &[CertificateReport], outcomes: &[AttackOutcome]) -> Option<f64> {
    let certified: BTreeSet<&str> = reports
        .iter()
        .filter(|r| r.certified)
        .map(|r| r.query_id.as_str())
        .collect();
    let mut per_query: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for o in outcomes.iter().filter(|o| certified.contains(o.query_id.as_str())) {
        let e = per_query.entry(o.query_id.as_str()).or_default();
        e.1 += 1;
        if o.best_rank_after < o.original_rank {
            e.0 += 1;
        }
    }
    for q in &certified {
        if !per_query.contains_key(q) {
            log::warn!("certified query `{q}` has no attack outcomes; left out of CondSR");
        }
    }
    if per_query.is_empty() {
        return None;
    }
    let sum: f64 = per_query.values().map(|(w, n)| *w as f64 / *n as f64).sum();
    Some(100.0 * sum / per_query.len() as f64)
}

/// Mean reciprocal rank of the first relevant document within `cutoff`.
/// Queries without qrels are skipped.
pub fn mrr(run: &BTreeMap<String, RankedList>, qrels: &BTreeMap<String, BTreeSet<String>>, cutoff: usize) -> Result<f64> {
    if cutoff == 0 {
        return Err(Error::InvalidParameter("MRR cutoff must be at least 1".into()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (qid, list) in run {
        let Some(rel) = qrels.get(qid) else {
            log::warn!("query `{qid}` has no qrels; skipped");
            continue;
        };
        count += 1;
        if let Some(pos) = list.entries.iter().take(cutoff).position(|e| rel.contains(&e.doc_id)) {
            sum += 1.0 / (pos + 1) as f64;
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// A metric that may be undefined; serialises as a number or `"undefined"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Defined {
    Value(f64),
    Undefined,
}

impl Defined {
    pub fn value(self) -> Option<f64> {
        match self {
            Defined::Value(v) => Some(v),
            Defined::Undefined => None,
        }
    }
}

impl From<Option<f64>> for Defined {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Defined::Undefined, Defined::Value)
    }
}

impl std::fmt::Display for Defined {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Defined::Value(v) => write!(f, "{v:.2}"),
            Defined::Undefined => f.write_str("undefined"),
        }
    }
}

impl Serialize for Defined {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Defined::Value(v) => s.serialize_f64(*v),
            Defined::Undefined => s.serialize_str("undefined"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub crq: Defined,
    pub sr: Defined,
    pub cond_sr: Defined,
    pub mrr_at: BTreeMap<usize, f64>,
    pub queries: usize,
    pub certified_queries: usize,
    /// Documents the attacker targeted; this is the `N_q` pool for CondSR.
    pub attacked_docs: usize,
}

impl EvalSummary {
    pub fn compute(
        reports: &[CertificateReport],
        outcomes: &[AttackOutcome],
        mrr_inputs: Option<(&BTreeMap<String, RankedList>, &BTreeMap<String, BTreeSet<String>>)>,
        cutoffs: &[usize],
    ) -> Result<Self> {
        let mut mrr_at = BTreeMap::new();
        if let Some((run, qrels)) = mrr_inputs {
            for &c in cutoffs {
                mrr_at.insert(c, mrr(run, qrels, c)?);
            }
        }
        Ok(EvalSummary {
            crq: crq(reports).ok().into(),
            sr: sr(outcomes).ok().into(),
            cond_sr: cond_sr(reports, outcomes).into(),
            mrr_at,
            queries: reports.len(),
            certified_queries: reports.iter().filter(|r| r.certified).count(),
            attacked_docs: outcomes.len(),
        })
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<22}{}\n", "queries", self.queries));
        out.push_str(&format!("{:<22}{}\n", "certified queries", self.certified_queries));
        out.push_str(&format!("{:<22}{}\n", "attacked documents", self.attacked_docs));
        out.push_str(&format!("{:<22}{}\n", "CRQ (%)", self.crq));
        out.push_str(&format!("{:<22}{}\n", "SR (%)", self.sr));
        out.push_str(&format!("{:<22}{}\n", "CondSR (%)", self.cond_sr));
        for (c, v) in &self.mrr_at {
            out.push_str(&format!("{:<22}{v:.4}\n", format!("MRR@{c}")));
        }
        out
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    pub fn report(qid: &str, certified: bool) -> CertificateReport {
        CertificateReport {
            query_id: qid.into(),
            k: 1,
            delta: 1.0,
            smoothing: "exact".into(),
            n: None,
            alpha: None,
            doc_k: "a".into(),
            doc_k1: "b".into(),
            fbar_k: 0.0,
            fbar_k1: 0.0,
            radius: 0.0,
            max_od: 0.0,
            delta_lq: if certified { 0.1 } else { -0.1 },
            certified,
            per_doc_od: vec![],
        }
    }

    pub fn outcome(qid: &str, doc: &str, success: bool) -> AttackOutcome {
        AttackOutcome {
            query_id: qid.into(),
            doc_id: doc.into(),
            original_rank: 5,
            best_rank_after: if success { 3 } else { 5 },
            original_score: 0.1,
            best_score: 0.1,
            best_doc: vec![],
            success,
            substitutions: vec![],
        }
    }

    #[test]
    fn crq_arithmetic() {
        let mut reports: Vec<_> = (0..200).map(|i| report(&format!("q{i}"), i < 31)).collect();
        assert_eq!(crq(&reports).unwrap(), 15.5);
        reports.iter_mut().for_each(|r| r.certified = false);
        assert_eq!(crq(&reports).unwrap(), 0.0);
        reports.iter_mut().for_each(|r| r.certified = true);
        assert_eq!(crq(&reports).unwrap(), 100.0);
        assert!(crq(&[]).is_err());
    }

    #[test]
    fn sr_arithmetic() {
        let all: Vec<_> = (0..4).map(|i| outcome("q", &format!("d{i}"), true)).collect();
        assert_eq!(sr(&all).unwrap(), 100.0);
        let three: Vec<_> = (0..4).map(|i| outcome("q", &format!("d{i}"), i < 3)).collect();
        assert_eq!(sr(&three).unwrap(), 75.0);
        assert!(sr(&[]).is_err());
    }

    #[test]
    fn cond_sr_averages_certified_queries() {
        let reports = vec![report("q1", true), report("q2", true), report("q3", false)];
        let mut outcomes = Vec::new();
        // q1: 1 of 5 improves, q2: 3 of 5
        for i in 0..5 {
            outcomes.push(outcome("q1", &format!("d{i}"), i < 1));
            outcomes.push(outcome("q2", &format!("d{i}"), i < 3));
            outcomes.push(outcome("q3", &format!("d{i}"), true));
        }
        let v = cond_sr(&reports, &outcomes).unwrap();
        assert!((v - 40.0).abs() < 1e-12);

        let none_improved = vec![outcome("q1", "d0", false)];
        assert_eq!(cond_sr(&reports[..1], &none_improved), Some(0.0));
        assert_eq!(cond_sr(&[report("q3", false)], &outcomes), None);
    }

    #[test]
    fn mrr_examples() {
        let run: BTreeMap<String, RankedList> = [
            ("q1", vec!["a", "b", "c"]),
            ("q2", vec!["x", "y", "z"]),
            ("q3", vec!["m", "n", "o"]),
            ("q4", vec!["r", "s", "t"]),
        ]
        .into_iter()
        .map(|(q, docs)| {
            let scores = docs.iter().enumerate().map(|(i, d)| (d.to_string(), 1.0 - i as f64 * 0.1)).collect();
            (q.to_string(), RankedList::from_scores(q, scores))
        })
        .collect();
        let rel = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
        let qrels: BTreeMap<String, BTreeSet<String>> = [
            ("q1".into(), rel(&["a"])),
            ("q2".into(), rel(&["y"])),
            ("q3".into(), rel(&["o", "zz"])),
            ("q4".into(), rel(&["nothing"])),
        ]
        .into_iter()
        .collect();
        let expected = (1.0 + 0.5 + 1.0 / 3.0 + 0.0) / 4.0;
        assert!((mrr(&run, &qrels, 10).unwrap() - expected).abs() < 1e-12);
        assert!((mrr(&run, &qrels, 2).unwrap() - 1.5 / 4.0).abs() < 1e-12);

        let single: BTreeMap<_, _> = run.iter().filter(|(k, _)| *k == "q2").map(|(k, v)| (k.clone(), v.clone())).collect();
        assert_eq!(mrr(&single, &qrels, 10).unwrap(), 0.5);
        let firsts: BTreeMap<String, BTreeSet<String>> =
            [("q1", "a"), ("q2", "x"), ("q3", "m"), ("q4", "r")].iter().map(|(q, d)| (q.to_string(), rel(&[d]))).collect();
        assert_eq!(mrr(&run, &firsts, 10).unwrap(), 1.0);
        assert!(mrr(&run, &qrels, 0).is_err());
    }

    #[test]
    fn summary_reports_undefined_cond_sr() {
        let s = EvalSummary::compute(&[report("q", false)], &[outcome("q", "d", false)], None, &[]).unwrap();
        assert_eq!(s.sr, Defined::Value(0.0));
        assert_eq!(s.cond_sr, Defined::Undefined);
        let v = serde_json::to_value(&s).unwrap();
        assert_eq!(v["cond_sr"], "undefined");
        assert!(s.table().contains("undefined"));
    }

    proptest! {
        #[test]
        fn metrics_ignore_order(flags in prop::collection::vec((any::<bool>(), any::<bool>(), 0usize..4), 1..40), seed in any::<u64>()) {
            let reports: Vec<_> = (0..4).map(|i| report(&format!("q{i}"), flags[i % flags.len()].0)).collect();
            let outcomes: Vec<_> = flags.iter().enumerate().map(|(i, (_, s, q))| outcome(&format!("q{q}"), &format!("d{i}"), *s)).collect();
            let mut r2 = reports.clone();
            let mut o2 = outcomes.clone();
            // deterministic shuffle
            let n = o2.len();
            for i in 0..n {
                let j = (seed as usize).wrapping_add(i * 7919) % n;
                o2.swap(i, j);
            }
            r2.reverse();
            prop_assert_eq!(crq(&reports).unwrap(), crq(&r2).unwrap());
            prop_assert_eq!(sr(&outcomes).unwrap(), sr(&o2).unwrap());
            let a = cond_sr(&reports, &outcomes);
            let b = cond_sr(&r2, &o2);
            prop_assert_eq!(a.is_some(), b.is_some());
            if let (Some(a), Some(b)) = (a, b) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
