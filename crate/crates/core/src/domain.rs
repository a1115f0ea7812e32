//! Core records and the content-salience-map arithmetic.
//!
//! A document-level map holds, for every topic present in the document and
//! every length budget, the fraction of the topic's reference-answer claims
//! entailed by the summary written under that budget. The corpus-level map
//! averages those cells over the documents in which the topic is present.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of whitespace-separated tokens in `text`.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Target summary length in words.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct LengthBudget(u32);

impl LengthBudget {
    pub fn new(words: u32) -> Result<Self> {
        if words == 0 {
            return Err(Error::InvalidInput("length budget must be at least one word".into()));
        }
        Ok(Self(words))
    }

    pub fn words(self) -> u32 {
        self.0
    }
}

impl TryFrom<u32> for LengthBudget {
    type Error = Error;

    fn try_from(words: u32) -> Result<Self> {
        Self::new(words)
    }
}

impl From<LengthBudget> for u32 {
    fn from(b: LengthBudget) -> u32 {
        b.0
    }
}

impl fmt::Display for LengthBudget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// A non-empty, strictly increasing set of length budgets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<LengthBudget>", into = "Vec<LengthBudget>")]
pub struct BudgetSet(Vec<LengthBudget>);

impl BudgetSet {
    pub const DEFAULT_WORDS: [u32; 5] = [10, 20, 50, 100, 200];

    pub fn new(budgets: Vec<LengthBudget>) -> Result<Self> {
        if budgets.is_empty() {
            return Err(Error::InvalidInput("budget set is empty".into()));
        }
        if budgets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(format!(
                "budgets must be strictly increasing, got {:?}",
                budgets.iter().map(|b| b.0).collect::<Vec<_>>()
            )));
        }
        Ok(Self(budgets))
    }

    pub fn from_words(words: &[u32]) -> Result<Self> {
        let budgets = words
            .iter()
            .map(|&w| LengthBudget::new(w))
            .collect::<Result<Vec<_>>>()?;
        Self::new(budgets)
    }

    pub fn as_slice(&self) -> &[LengthBudget] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = LengthBudget> + '_ {
        self.0.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, budget: LengthBudget) -> bool {
        self.0.binary_search(&budget).is_ok()
    }

    pub fn largest(&self) -> LengthBudget {
        *self.0.last().expect("budget set is never empty")
    }
}

impl Default for BudgetSet {
    fn default() -> Self {
        Self::from_words(&Self::DEFAULT_WORDS).expect("default budgets are valid")
    }
}

impl TryFrom<Vec<LengthBudget>> for BudgetSet {
    type Error = Error;

    fn try_from(v: Vec<LengthBudget>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<BudgetSet> for Vec<LengthBudget> {
    fn from(b: BudgetSet) -> Self {
        b.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub doc_id: String,
    pub text: String,
    pub word_count: usize,
}

impl DocumentRecord {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        Self {
            doc_id: doc_id.into(),
            word_count: word_count(&text),
            text,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub doc_id: String,
    pub budget: LengthBudget,
    pub replicate: u32,
    pub backend_id: String,
    pub text: String,
    pub word_count: usize,
}

impl SummaryRecord {
    pub fn new(
        doc_id: impl Into<String>,
        budget: LengthBudget,
        replicate: u32,
        backend_id: impl Into<String>,
        text: impl Into<String>,
    ) -> Self {
        let text = text.into();
        Self {
            doc_id: doc_id.into(),
            budget,
            replicate,
            backend_id: backend_id.into(),
            word_count: word_count(&text),
            text,
        }
    }

    /// Uniqueness key `(doc_id, budget, replicate, backend_id)`.
    pub fn key(&self) -> (&str, LengthBudget, u32, &str) {
        (&self.doc_id, self.budget, self.replicate, &self.backend_id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question_id: String,
    pub doc_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicCluster {
    pub topic_id: String,
    pub member_ids: BTreeSet<String>,
    pub representative_id: String,
    pub representative_text: String,
    /// Topic ids folded into this cluster by a merge override.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub merged_from: BTreeSet<String>,
}

/// Reference answer for one (document, topic); `text == None` marks the topic
/// as absent from the document.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceAnswer {
    pub doc_id: String,
    pub topic_id: String,
    pub text: Option<String>,
    pub word_count: usize,
}

impl ReferenceAnswer {
    pub fn present(doc_id: impl Into<String>, topic_id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        Self {
            doc_id: doc_id.into(),
            topic_id: topic_id.into(),
            word_count: word_count(&text),
            text: Some(text),
        }
    }

    pub fn absent(doc_id: impl Into<String>, topic_id: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            topic_id: topic_id.into(),
            text: None,
            word_count: 0,
        }
    }

    pub fn is_absent(&self) -> bool {
        self.text.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomicClaim {
    pub claim_id: String,
    pub doc_id: String,
    pub topic_id: String,
    pub ordinal: u32,
    pub text: String,
}

impl AtomicClaim {
    pub fn make_id(doc_id: &str, topic_id: &str, ordinal: u32) -> String {
        format!("{doc_id}:{topic_id}:{ordinal:03}")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimVerdict {
    pub claim_id: String,
    pub doc_id: String,
    pub topic_id: String,
    pub budget: LengthBudget,
    pub replicate: u32,
    pub backend_id: String,
    pub entailed: bool,
}

/// Topic → budget → score. Sorted keys give a fixed iteration order.
pub type CsmTable = BTreeMap<String, BTreeMap<LengthBudget, f64>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocumentCsm {
    pub doc_id: String,
    pub backend_id: String,
    pub replicate: u32,
    pub entries: CsmTable,
    pub absent_topics: BTreeSet<String>,
}

impl DocumentCsm {
    pub fn get(&self, topic_id: &str, budget: LengthBudget) -> Option<f64> {
        self.entries.get(topic_id)?.get(&budget).copied()
    }

    pub fn is_present(&self, topic_id: &str) -> bool {
        self.entries.contains_key(topic_id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusCsm {
    pub backend_id: String,
    /// `None` for the mean over replicates.
    pub replicate: Option<u32>,
    pub corpus_size: usize,
    pub entries: CsmTable,
    pub prevalence: BTreeMap<String, f64>,
    pub support: BTreeMap<String, usize>,
}

impl CorpusCsm {
    pub fn get(&self, topic_id: &str, budget: LengthBudget) -> Option<f64> {
        self.entries.get(topic_id)?.get(&budget).copied()
    }

    /// Every topic known to this map, including zero-support ones.
    pub fn topics(&self) -> impl Iterator<Item = &str> {
        self.prevalence.keys().map(String::as_str)
    }

    /// Mean answerability per budget over the topics with entries.
    pub fn average_row(&self) -> BTreeMap<LengthBudget, f64> {
        let mut sums: BTreeMap<LengthBudget, (f64, usize)> = BTreeMap::new();
        for row in self.entries.values() {
            for (&b, &v) in row {
                let e = sums.entry(b).or_insert((0.0, 0));
                e.0 += v;
                e.1 += 1;
            }
        }
        sums.into_iter().map(|(b, (s, n))| (b, s / n as f64)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RaterKind {
    Human,
    Llm,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SalienceRating {
    pub rater_id: String,
    pub rater_kind: RaterKind,
    pub topic_id: String,
    pub rating: u8,
    pub rationale: String,
    pub run_index: u32,
}

impl SalienceRating {
    pub const MIN: u8 = 1;
    pub const MAX: u8 = 5;

    pub fn in_range(rating: i64) -> bool {
        (Self::MIN as i64..=Self::MAX as i64).contains(&rating)
    }
}

/// Fraction of a topic's reference claims entailed by one summary.
pub fn answerability(verdicts: &[bool]) -> Result<f64> {
    if verdicts.is_empty() {
        return Err(Error::Contract(
            "answerability needs at least one claim verdict; zero-claim topics are absent".into(),
        ));
    }
    let entailed = verdicts.iter().filter(|&&e| e).count();
    Ok(entailed as f64 / verdicts.len() as f64)
}

pub fn topic_prevalence(support: usize, corpus_size: usize) -> Result<f64> {
    if corpus_size == 0 {
        return Err(Error::EmptyCorpus);
    }
    if support > corpus_size {
        return Err(Error::InvalidInput(format!(
            "topic support {support} exceeds corpus size {corpus_size}"
        )));
    }
    Ok(support as f64 / corpus_size as f64)
}

/// Verdict lists keyed by `(topic_id, budget)` for one summary ladder.
pub type VerdictGroups = BTreeMap<(String, LengthBudget), Vec<bool>>;

/// Assemble the map of one document for one backend and replicate.
///
/// `presence` lists every topic of the universe with its presence flag in
/// this document. Present topics need a verdict group for every budget;
/// absent topics must have none.
pub fn build_document_csm(
    doc_id: &str,
    backend_id: &str,
    replicate: u32,
    groups: &VerdictGroups,
    presence: &BTreeMap<String, bool>,
    budgets: &BudgetSet,
) -> Result<DocumentCsm> {
    for (topic, budget) in groups.keys() {
        match presence.get(topic) {
            None => {
                return Err(Error::Contract(format!(
                    "document {doc_id}: verdicts for unknown topic {topic}"
                )))
            }
            Some(false) => {
                return Err(Error::Contract(format!(
                    "document {doc_id}: verdicts for absent topic {topic}"
                )))
            }
            Some(true) => {}
        }
        if !budgets.contains(*budget) {
            return Err(Error::Contract(format!(
                "document {doc_id}: verdicts for unconfigured budget {budget}"
            )));
        }
    }

    let mut entries = CsmTable::new();
    let mut absent_topics = BTreeSet::new();
    for (topic, &present) in presence {
        if !present {
            absent_topics.insert(topic.clone());
            continue;
        }
        let mut row = BTreeMap::new();
        for budget in budgets.iter() {
            let group = groups.get(&(topic.clone(), budget)).ok_or_else(|| {
                Error::IncompleteInput(format!(
                    "document {doc_id}, backend {backend_id}, replicate {replicate}: \
                     no verdicts for topic {topic} at budget {budget}"
                ))
            })?;
            row.insert(budget, answerability(group)?);
        }
        entries.insert(topic.clone(), row);
    }

    Ok(DocumentCsm {
        doc_id: doc_id.to_string(),
        backend_id: backend_id.to_string(),
        replicate,
        entries,
        absent_topics,
    })
}

/// Average document maps into the corpus map over supporting documents.
///
/// The topic universe is the union of present and absent topics over all
/// document maps; topics never present get support 0 and no entries.
pub fn build_corpus_csm(doc_csms: &[DocumentCsm], corpus_size: usize) -> Result<CorpusCsm> {
    if corpus_size == 0 {
        return Err(Error::EmptyCorpus);
    }
    if doc_csms.len() > corpus_size {
        return Err(Error::InvalidInput(format!(
            "{} document maps for a corpus of {corpus_size}",
            doc_csms.len()
        )));
    }
    let Some(first) = doc_csms.first() else {
        return Ok(CorpusCsm {
            backend_id: String::new(),
            replicate: None,
            corpus_size,
            entries: CsmTable::new(),
            prevalence: BTreeMap::new(),
            support: BTreeMap::new(),
        });
    };
    if let Some(other) = doc_csms
        .iter()
        .find(|d| d.backend_id != first.backend_id || d.replicate != first.replicate)
    {
        return Err(Error::Contract(format!(
            "mixed document maps: ({}, {}) vs ({}, {})",
            first.backend_id, first.replicate, other.backend_id, other.replicate
        )));
    }

    let mut docs: Vec<&DocumentCsm> = doc_csms.iter().collect();
    docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    if let Some(w) = docs.windows(2).find(|w| w[0].doc_id == w[1].doc_id) {
        return Err(Error::Contract(format!("duplicate document map for {}", w[0].doc_id)));
    }

    let mut universe: BTreeSet<&str> = BTreeSet::new();
    for d in &docs {
        universe.extend(d.entries.keys().map(String::as_str));
        universe.extend(d.absent_topics.iter().map(String::as_str));
    }

    let mut entries = CsmTable::new();
    let mut prevalence = BTreeMap::new();
    let mut support = BTreeMap::new();
    for topic in universe {
        let rows: Vec<&BTreeMap<LengthBudget, f64>> =
            docs.iter().filter_map(|d| d.entries.get(topic)).collect();
        support.insert(topic.to_string(), rows.len());
        prevalence.insert(topic.to_string(), topic_prevalence(rows.len(), corpus_size)?);
        let Some(first_row) = rows.first() else {
            continue;
        };
        let mut out = BTreeMap::new();
        for &budget in first_row.keys() {
            let mut sum = 0.0;
            for row in &rows {
                let v = row.get(&budget).ok_or_else(|| {
                    Error::Contract(format!("topic {topic}: document maps disagree on budgets"))
                })?;
                sum += v;
            }
            out.insert(budget, sum / rows.len() as f64);
        }
        if rows.iter().any(|r| r.len() != out.len()) {
            return Err(Error::Contract(format!(
                "topic {topic}: document maps disagree on budgets"
            )));
        }
        entries.insert(topic.to_string(), out);
    }

    Ok(CorpusCsm {
        backend_id: first.backend_id.clone(),
        replicate: Some(first.replicate),
        corpus_size,
        entries,
        prevalence,
        support,
    })
}

/// Cell-wise mean of per-replicate corpus maps of one backend.
pub fn mean_corpus_csm(per_replicate: &[CorpusCsm]) -> Result<CorpusCsm> {
    let mut maps: Vec<&CorpusCsm> = per_replicate.iter().collect();
    maps.sort_by_key(|m| m.replicate);
    let first = *maps
        .first()
        .ok_or_else(|| Error::Contract("no replicate maps to average".into()))?;
    for m in &maps[1..] {
        if m.backend_id != first.backend_id
            || m.support != first.support
            || m.corpus_size != first.corpus_size
        {
            return Err(Error::Contract(format!(
                "replicate maps of {} differ in backend or topic support",
                first.backend_id
            )));
        }
    }
    let mut entries = CsmTable::new();
    for (topic, row) in &first.entries {
        let mut out = BTreeMap::new();
        for &budget in row.keys() {
            let mut sum = 0.0;
            for m in &maps {
                sum += m.get(topic, budget).ok_or_else(|| {
                    Error::Contract(format!("replicate maps disagree on cell ({topic}, {budget})"))
                })?;
            }
            out.insert(budget, sum / maps.len() as f64);
        }
        entries.insert(topic.clone(), out);
    }
    Ok(CorpusCsm {
        backend_id: first.backend_id.clone(),
        replicate: None,
        corpus_size: first.corpus_size,
        entries,
        prevalence: first.prevalence.clone(),
        support: first.support.clone(),
    })
}
