use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::par_map;
use crate::domain::{
    build_corpus_csm, build_document_csm, mean_corpus_csm, AtomicClaim, BudgetSet, ClaimVerdict, CorpusCsm,
    DocumentCsm, ReferenceAnswer, SummaryRecord, VerdictGroups,
};
use crate::error::{Error, Result};
use crate::gateway::{BackendProfile, Gateway};

/// Judge every claim against every summary of its document. Output is sorted
/// by (backend, replicate, claim, budget).
pub fn score_entailments(
    claims: &[AtomicClaim],
    summaries: &[SummaryRecord],
    profile: &BackendProfile,
    gateway: &Gateway,
) -> Result<Vec<ClaimVerdict>> {
    let mut by_doc: BTreeMap<&str, Vec<&SummaryRecord>> = BTreeMap::new();
    for s in summaries {
        by_doc.entry(s.doc_id.as_str()).or_default().push(s);
    }
    let mut pairs: Vec<(&AtomicClaim, &SummaryRecord)> = claims
        .iter()
        .flat_map(|c| {
            by_doc
                .get(c.doc_id.as_str())
                .into_iter()
                .flatten()
                .map(move |s| (c, *s))
        })
        .collect();
    pairs.sort_by(|(ca, sa), (cb, sb)| {
        (&sa.backend_id, sa.replicate, &ca.claim_id, sa.budget).cmp(&(&sb.backend_id, sb.replicate, &cb.claim_id, sb.budget))
    });

    par_map(profile.max_parallel, &pairs, |&(c, s)| {
        Ok(ClaimVerdict {
            claim_id: c.claim_id.clone(),
            doc_id: c.doc_id.clone(),
            topic_id: c.topic_id.clone(),
            budget: s.budget,
            replicate: s.replicate,
            backend_id: s.backend_id.clone(),
            entailed: gateway.judge_entailment(profile, &c.text, &s.text)?,
        })
    })
}

/// Document → topic → present flag, from the (coerced) reference answers.
pub fn topic_presence(answers: &[ReferenceAnswer]) -> BTreeMap<String, BTreeMap<String, bool>> {
    let mut out: BTreeMap<String, BTreeMap<String, bool>> = BTreeMap::new();
    for a in answers {
        out.entry(a.doc_id.clone())
            .or_default()
            .insert(a.topic_id.clone(), !a.is_absent());
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsmBundle {
    pub documents: Vec<DocumentCsm>,
    /// One map per (backend, replicate).
    pub per_replicate: Vec<CorpusCsm>,
    /// One mean-over-replicates map per backend.
    pub mean: Vec<CorpusCsm>,
}

impl CsmBundle {
    pub fn mean_for(&self, backend_id: &str) -> Option<&CorpusCsm> {
        self.mean.iter().find(|c| c.backend_id == backend_id)
    }
}

/// Document, per-replicate corpus and mean corpus maps for every backend and
/// replicate that has verdicts. `presence` must cover the whole corpus.
pub fn build_csms(
    verdicts: &[ClaimVerdict],
    presence: &BTreeMap<String, BTreeMap<String, bool>>,
    budgets: &BudgetSet,
) -> Result<CsmBundle> {
    let corpus_size = presence.len();
    if corpus_size == 0 {
        return Err(Error::EmptyCorpus);
    }
    let mut grouped: BTreeMap<(&str, u32), BTreeMap<&str, VerdictGroups>> = BTreeMap::new();
    for v in verdicts {
        if !presence.contains_key(&v.doc_id) {
            return Err(Error::Contract(format!("verdict for unknown document {}", v.doc_id)));
        }
        grouped
            .entry((v.backend_id.as_str(), v.replicate))
            .or_default()
            .entry(v.doc_id.as_str())
            .or_default()
            .entry((v.topic_id.clone(), v.budget))
            .or_default()
            .push(v.entailed);
    }

    let empty = VerdictGroups::new();
    let mut documents = Vec::new();
    let mut per_backend: BTreeMap<&str, Vec<CorpusCsm>> = BTreeMap::new();
    for (&(backend, replicate), by_doc) in &grouped {
        let docs: Vec<DocumentCsm> = presence
            .iter()
            .map(|(doc, present)| {
                let groups = by_doc.get(doc.as_str()).unwrap_or(&empty);
                build_document_csm(doc, backend, replicate, groups, present, budgets)
            })
            .collect::<Result<_>>()?;
        let corpus = build_corpus_csm(&docs, corpus_size)?;
        per_backend.entry(backend).or_default().push(corpus);
        documents.extend(docs);
    }
    let per_replicate: Vec<CorpusCsm> = per_backend.values().flatten().cloned().collect();
    let mean = per_backend
        .values()
        .map(|reps| mean_corpus_csm(reps))
        .collect::<Result<Vec<_>>>()?;
    Ok(CsmBundle {
        documents,
        per_replicate,
        mean,
    })
}
