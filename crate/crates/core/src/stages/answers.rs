use std::sync::OnceLock;

use regex::Regex;

use super::par_map;
use crate::domain::{AtomicClaim, DocumentRecord, ReferenceAnswer, TopicCluster};
use crate::error::{Error, Result};
use crate::gateway::{BackendProfile, Gateway};
use crate::prompts::{PromptTemplate, UNANSWERABLE};

fn is_unanswerable(text: &str) -> bool {
    let t = text.trim_start_matches(|c: char| c.is_whitespace() || c == '*' || c == '"' || c == '`');
    t.len() >= UNANSWERABLE.len()
        && t.is_char_boundary(UNANSWERABLE.len())
        && t[..UNANSWERABLE.len()].eq_ignore_ascii_case(UNANSWERABLE)
}

/// One reference answer per (document, topic), sorted by that pair. The
/// sentinel or an empty response marks the topic absent.
pub fn answer_questions(
    corpus: &[DocumentRecord],
    topics: &[TopicCluster],
    profile: &BackendProfile,
    template: &PromptTemplate,
    gateway: &Gateway,
) -> Result<Vec<ReferenceAnswer>> {
    let mut docs: Vec<&DocumentRecord> = corpus.iter().collect();
    docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    let mut topics: Vec<&TopicCluster> = topics.iter().collect();
    topics.sort_by(|a, b| a.topic_id.cmp(&b.topic_id));
    if let Some(t) = topics.iter().find(|t| t.representative_text.trim().is_empty()) {
        return Err(Error::Contract(format!("topic {} has no representative question", t.topic_id)));
    }
    let pairs: Vec<(&DocumentRecord, &TopicCluster)> =
        docs.iter().flat_map(|d| topics.iter().map(move |t| (*d, *t))).collect();

    par_map(profile.max_parallel, &pairs, |&(d, t)| {
        let request = template.render(&[
            ("document", d.text.clone()),
            ("question", t.representative_text.clone()),
        ])?;
        match gateway.complete_chat(profile, &request, "qa") {
            Ok(text) if !is_unanswerable(&text) => Ok(ReferenceAnswer::present(&d.doc_id, &t.topic_id, text.trim())),
            Ok(_) | Err(Error::EmptyOutput { .. }) => Ok(ReferenceAnswer::absent(&d.doc_id, &t.topic_id)),
            Err(e) => Err(e),
        }
    })
}

fn bullet() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(?:[-*•]|\d+\s*[.)])?\s*(.*?)\s*$").expect("valid regex"))
}

/// One claim per non-empty line, with list markers removed.
pub fn parse_claims(response: &str) -> Vec<String> {
    response
        .lines()
        .filter_map(|l| bullet().captures(l).map(|c| c[1].to_string()))
        .filter(|c| !c.is_empty())
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClaimOutcome {
    pub claims: Vec<AtomicClaim>,
    /// Input answers, with those that yielded no claim turned absent.
    pub answers: Vec<ReferenceAnswer>,
    pub coerced_absent: usize,
}

/// Split every present answer into atomic claims. Claims are sorted by
/// (doc, topic, ordinal); ordinals start at 0.
pub fn decompose_claims(
    answers: &[ReferenceAnswer],
    topics: &[TopicCluster],
    profile: &BackendProfile,
    template: &PromptTemplate,
    gateway: &Gateway,
) -> Result<ClaimOutcome> {
    let mut answers = answers.to_vec();
    answers.sort_by(|a, b| (&a.doc_id, &a.topic_id).cmp(&(&b.doc_id, &b.topic_id)));
    let question = |topic_id: &str| {
        topics
            .iter()
            .find(|t| t.topic_id == topic_id)
            .map(|t| t.representative_text.clone())
            .unwrap_or_default()
    };
    let present: Vec<usize> = (0..answers.len()).filter(|&i| !answers[i].is_absent()).collect();
    let split = par_map(profile.max_parallel, &present, |&i| {
        let a = &answers[i];
        let request = template.render(&[
            ("answer", a.text.clone().unwrap_or_default()),
            ("question", question(&a.topic_id)),
        ])?;
        match gateway.complete_chat(profile, &request, "claims") {
            Ok(text) => Ok(parse_claims(&text)),
            Err(Error::EmptyOutput { .. }) => Ok(Vec::new()),
            Err(e) => Err(e),
        }
    })?;

    let mut out = ClaimOutcome::default();
    for (&i, texts) in present.iter().zip(split) {
        let a = &mut answers[i];
        if texts.is_empty() {
            log::warn!("{}/{}: answer yielded no claims, treated as absent", a.doc_id, a.topic_id);
            *a = ReferenceAnswer::absent(&a.doc_id, &a.topic_id);
            out.coerced_absent += 1;
            continue;
        }
        out.claims.extend(texts.into_iter().enumerate().map(|(k, text)| AtomicClaim {
            claim_id: AtomicClaim::make_id(&a.doc_id, &a.topic_id, k as u32),
            doc_id: a.doc_id.clone(),
            topic_id: a.topic_id.clone(),
            ordinal: k as u32,
            text,
        }));
    }
    out.answers = answers;
    Ok(out)
}
