use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::par_map;
use crate::domain::{word_count, BudgetSet, DocumentRecord, LengthBudget, SummaryRecord};
use crate::error::{Error, Result};
use crate::gateway::{BackendProfile, Gateway};
use crate::prompts::PromptTemplate;

/// Backend id given to summaries loaded from a file.
pub const INGESTED_BACKEND: &str = "ingested";

/// Probe one backend: `|corpus| * |budgets| * replicates` summaries, sorted by
/// `(doc_id, budget, replicate)`.
pub fn generate_summaries(
    corpus: &[DocumentRecord],
    budgets: &BudgetSet,
    replicates: u32,
    profile: &BackendProfile,
    template: &PromptTemplate,
    gateway: &Gateway,
) -> Result<Vec<SummaryRecord>> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if replicates == 0 {
        return Err(Error::Config("at least one replicate is required".into()));
    }
    let mut docs: Vec<&DocumentRecord> = corpus.iter().collect();
    docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    let cells: Vec<(&DocumentRecord, LengthBudget, u32)> = docs
        .iter()
        .flat_map(|d| budgets.iter().flat_map(move |b| (0..replicates).map(move |r| (*d, b, r))))
        .collect();

    par_map(profile.max_parallel, &cells, |&(doc, budget, r)| {
        let request = template.render(&[
            ("document", doc.text.clone()),
            ("target_words", budget.words().to_string()),
        ])?;
        let text = gateway.complete_chat(profile, &request, &format!("r{r}"))?;
        Ok(SummaryRecord::new(&doc.doc_id, budget, r, &profile.backend_id, text.trim()))
    })
}

/// Budget whose target is relatively closest to `words`, if the relative
/// deviation is within `tolerance`. Ties go to the smaller budget.
pub fn bucket_budget(words: usize, budgets: &BudgetSet, tolerance: f64) -> Option<LengthBudget> {
    let deviation = |b: LengthBudget| (words as f64 - b.words() as f64).abs() / b.words() as f64;
    let best = budgets
        .iter()
        .min_by(|a, b| deviation(*a).total_cmp(&deviation(*b)))?;
    // Small slack so that boundary cases such as 11 words against 10 pass.
    (deviation(best) <= tolerance + 1e-12).then_some(best)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestRow {
    pub doc_id: String,
    #[serde(alias = "summary")]
    pub text: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IngestOutcome {
    pub records: Vec<SummaryRecord>,
    pub out_of_tolerance: usize,
    pub unknown_doc: usize,
    /// Rows whose (document, budget) bucket was already filled.
    pub duplicate: usize,
}

/// Bucket pre-existing summaries onto the budget grid as replicate 0 of the
/// [`INGESTED_BACKEND`] pseudo-backend. The first row per bucket wins.
pub fn ingest_summaries(
    rows: &[IngestRow],
    budgets: &BudgetSet,
    tolerance: f64,
    known_docs: &BTreeSet<String>,
) -> Result<IngestOutcome> {
    if !(0.0..1.0).contains(&tolerance) {
        return Err(Error::Config(format!("tolerance {tolerance} outside [0, 1)")));
    }
    let mut out = IngestOutcome::default();
    let mut filled: BTreeMap<(String, LengthBudget), SummaryRecord> = BTreeMap::new();
    for row in rows {
        if !known_docs.contains(&row.doc_id) {
            out.unknown_doc += 1;
            continue;
        }
        let Some(budget) = bucket_budget(word_count(&row.text), budgets, tolerance) else {
            out.out_of_tolerance += 1;
            continue;
        };
        let key = (row.doc_id.clone(), budget);
        if filled.contains_key(&key) {
            out.duplicate += 1;
            continue;
        }
        filled.insert(key, SummaryRecord::new(&row.doc_id, budget, 0, INGESTED_BACKEND, row.text.trim()));
    }
    if filled.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no summary could be assigned to a budget ({} out of tolerance, {} unknown documents)",
            out.out_of_tolerance, out.unknown_doc
        )));
    }
    out.records = filled.into_values().collect();
    Ok(out)
}
