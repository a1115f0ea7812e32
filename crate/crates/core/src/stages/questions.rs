use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;

use super::par_map;
use crate::domain::{BudgetSet, DocumentRecord, QuestionRecord, SummaryRecord};
use crate::error::{Error, Result};
use crate::gateway::{BackendProfile, Gateway};
use crate::prompts::PromptTemplate;

const EMBED_BATCH: usize = 64;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct QuestionOutcome {
    pub questions: Vec<QuestionRecord>,
    /// Documents whose response held no parseable question.
    pub skipped_docs: Vec<String>,
    /// Non-empty response lines that were not list items.
    pub dropped_lines: usize,
}

fn list_item() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(?:\d+\s*[.):]|[-*•])\s*(\S.*?)\s*$").expect("valid regex"))
}

/// Items of a numbered or bulleted list, plus the count of other non-empty
/// lines.
pub fn parse_question_list(response: &str) -> (Vec<String>, usize) {
    let mut items = Vec::new();
    let mut dropped = 0;
    for line in response.lines().filter(|l| !l.trim().is_empty()) {
        match list_item().captures(line) {
            Some(c) => items.push(c[1].to_string()),
            None => dropped += 1,
        }
    }
    (items, dropped)
}

/// The summaries of one document, shortest budget first.
pub fn summary_ladder(summaries: &[&SummaryRecord]) -> String {
    let mut sorted = summaries.to_vec();
    sorted.sort_by_key(|s| s.budget);
    sorted
        .iter()
        .map(|s| format!("Summary ({} words):\n{}", s.budget.words(), s.text))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Ask for up to `n` questions per document, showing the model the full
/// ladder of replicate-0 summaries from `source_backend`.
#[allow(clippy::too_many_arguments)]
pub fn generate_questions(
    corpus: &[DocumentRecord],
    summaries: &[SummaryRecord],
    source_backend: &str,
    budgets: &BudgetSet,
    n: usize,
    profile: &BackendProfile,
    template: &PromptTemplate,
    gateway: &Gateway,
) -> Result<QuestionOutcome> {
    if n == 0 {
        return Err(Error::Config("questions_per_doc must be at least 1".into()));
    }
    let mut ladders: BTreeMap<&str, Vec<&SummaryRecord>> = BTreeMap::new();
    for s in summaries.iter().filter(|s| s.backend_id == source_backend && s.replicate == 0) {
        ladders.entry(s.doc_id.as_str()).or_default().push(s);
    }
    let mut docs: Vec<&DocumentRecord> = corpus.iter().collect();
    docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    for d in &docs {
        let have = ladders.get(d.doc_id.as_str()).map_or(0, Vec::len);
        if have != budgets.len() {
            return Err(Error::IncompleteInput(format!(
                "document {}: {have} of {} summaries from {source_backend} for the question prompt",
                d.doc_id,
                budgets.len()
            )));
        }
    }

    let responses = par_map(profile.max_parallel, &docs, |d| {
        let request = template.render(&[
            ("summaries_ladder", summary_ladder(&ladders[d.doc_id.as_str()])),
            ("num_questions", n.to_string()),
            ("document", d.text.clone()),
        ])?;
        gateway.complete_chat(profile, &request, "qg")
    })?;

    let mut out = QuestionOutcome::default();
    for (d, response) in docs.iter().zip(responses) {
        let (mut items, dropped) = parse_question_list(&response);
        out.dropped_lines += dropped;
        items.truncate(n);
        if items.is_empty() {
            log::warn!("document {}: no parseable questions, skipped", d.doc_id);
            out.skipped_docs.push(d.doc_id.clone());
            continue;
        }
        out.questions.extend(items.into_iter().enumerate().map(|(i, text)| QuestionRecord {
            question_id: format!("{}-q{:02}", d.doc_id, i + 1),
            doc_id: d.doc_id.clone(),
            text,
            embedding: None,
        }));
    }
    if out.dropped_lines > 0 {
        log::info!("question generation: {} unparseable lines dropped", out.dropped_lines);
    }
    Ok(out)
}

/// Attach embeddings to every question.
pub fn embed_questions(
    questions: &mut [QuestionRecord],
    profile: &BackendProfile,
    gateway: &Gateway,
) -> Result<()> {
    let chunks: Vec<Vec<String>> = questions
        .chunks(EMBED_BATCH)
        .map(|c| c.iter().map(|q| q.text.clone()).collect())
        .collect();
    let vectors = par_map(profile.max_parallel, &chunks, |c| gateway.embed_texts(profile, c))?;
    let mut dim = None;
    for (q, v) in questions.iter_mut().zip(vectors.into_iter().flatten()) {
        if *dim.get_or_insert(v.len()) != v.len() {
            return Err(Error::Backend {
                key: q.question_id.clone(),
                message: "embedding dimension differs across batches".into(),
            });
        }
        q.embedding = Some(v);
    }
    Ok(())
}
