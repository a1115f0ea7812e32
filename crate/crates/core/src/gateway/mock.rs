//! Offline backend over planted corpora.
//!
//! A planted document is a list of fact lines. Each fact line starts with a
//! token `C<k>F<j>`: category `C<k>` has global priority `k` (1 is the most
//! salient) and `F<j>` numbers the fact within its document. Every mock role
//! is a pure function of the request:
//!
//! * summarizer: facts in priority order (category, then document order),
//!   added whole until the next one no longer fits the word target;
//! * question generation: one question per category seen in the ladder;
//! * answering: the document's fact lines of the asked category, or the
//!   unanswerable sentinel;
//! * claim splitting: one claim per answer line;
//! * entailment: 1 iff the claim's fact token occurs in the summary;
//! * embeddings: a unit vector seeded by the category tag plus a small
//!   text-dependent perturbation;
//! * introspection: rating `6 - k`, clamped to 1..=5.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{BackendProfile, Transport, TransportError};
use crate::domain::{word_count, DocumentRecord};
use crate::prompts::{PromptRequest, PromptRole, UNANSWERABLE};

pub const MOCK_EMBEDDING_DIM: usize = 64;
const EMBEDDING_NOISE: f64 = 0.02;
const EMPTY_SUMMARY: &str = "(no content)";

/// Parsed fact token `C<category>F<fact>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct FactToken {
    pub category: u32,
    pub fact: u32,
}

impl FactToken {
    pub fn parse(word: &str) -> Option<Self> {
        let rest = word.strip_prefix('C')?;
        let (cat, fact) = rest.split_once('F')?;
        if cat.is_empty() || fact.is_empty() {
            return None;
        }
        if !cat.bytes().chain(fact.bytes()).all(|b| b.is_ascii_digit()) {
            return None;
        }
        Some(Self {
            category: cat.parse().ok()?,
            fact: fact.parse().ok()?,
        })
    }

    pub fn text(self) -> String {
        format!("C{}F{}", self.category, self.fact)
    }
}

fn words_alnum(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !c.is_ascii_alphanumeric()).filter(|w| !w.is_empty())
}

/// Category tag `C<k>` mentioned in a question, if any.
pub fn category_tag(text: &str) -> Option<u32> {
    words_alnum(text).find_map(|w| {
        let digits = w.strip_prefix('C')?;
        if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
            digits.parse().ok()
        } else {
            None
        }
    })
}

/// First fact token occurring anywhere in `text`.
pub fn first_fact_token(text: &str) -> Option<FactToken> {
    words_alnum(text).find_map(FactToken::parse)
}

pub fn contains_token(text: &str, token: FactToken) -> bool {
    let t = token.text();
    words_alnum(text).any(|w| w == t)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlantedFact {
    pub token: FactToken,
    pub sentence: String,
    pub position: usize,
}

/// Fact lines of a planted document in document order.
pub fn planted_facts(document: &str) -> Vec<PlantedFact> {
    document
        .lines()
        .map(str::trim)
        .filter_map(|line| {
            let first = line.split_whitespace().next()?;
            FactToken::parse(first).map(|token| (token, line))
        })
        .enumerate()
        .map(|(position, (token, line))| PlantedFact {
            token,
            sentence: line.to_string(),
            position,
        })
        .collect()
}

/// Greedy priority fill of a word budget; never splits a fact.
pub fn mock_summary(document: &str, target_words: usize) -> String {
    let mut facts = planted_facts(document);
    facts.sort_by_key(|f| (f.token.category, f.position));
    let mut used = 0;
    let mut out = Vec::new();
    for f in &facts {
        let n = word_count(&f.sentence);
        if used + n > target_words {
            break;
        }
        used += n;
        out.push(f.sentence.as_str());
    }
    if out.is_empty() {
        EMPTY_SUMMARY.to_string()
    } else {
        out.join(" ")
    }
}

const QUESTION_FORMS: [&str; 3] = [
    "What does the document report about C{}?",
    "What information is given regarding C{}?",
    "Which details describe C{} in this text?",
];

fn digest_u64(parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

fn seeded_rng(parts: &[&str]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}

pub fn mock_questions(ladder: &str, limit: usize) -> String {
    let mut cats: Vec<u32> = words_alnum(ladder)
        .filter_map(FactToken::parse)
        .map(|t| t.category)
        .collect();
    cats.sort_unstable();
    cats.dedup();
    cats.iter()
        .take(limit)
        .enumerate()
        .map(|(i, &c)| {
            let form = QUESTION_FORMS[(digest_u64(&[ladder, &c.to_string()]) % 3) as usize];
            format!("{}. {}", i + 1, form.replace("{}", &c.to_string()))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn mock_answer(document: &str, question: &str) -> String {
    let Some(cat) = category_tag(question) else {
        return UNANSWERABLE.to_string();
    };
    let lines: Vec<String> = planted_facts(document)
        .into_iter()
        .filter(|f| f.token.category == cat)
        .map(|f| f.sentence)
        .collect();
    if lines.is_empty() {
        UNANSWERABLE.to_string()
    } else {
        lines.join("\n")
    }
}

pub fn mock_claims(answer: &str) -> String {
    answer
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| format!("- {l}"))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn mock_entailment(claim: &str, summary: &str) -> bool {
    first_fact_token(claim).is_some_and(|t| contains_token(summary, t))
}

pub fn mock_ratings(questions_list: &str) -> String {
    questions_list
        .lines()
        .filter_map(|line| {
            let line = line.trim();
            let (label, text) = line.split_once(':')?;
            let idx = label.strip_prefix('Q')?;
            idx.parse::<usize>().ok()?;
            let (rating, why) = match category_tag(text) {
                Some(k) => ((6i64 - k as i64).clamp(1, 5), format!("planted priority rank {k}")),
                None => (3, "no planted category".to_string()),
            };
            Some(format!("Q{idx}: {rating} | {why}"))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn mock_embedding(text: &str) -> Vec<f64> {
    let mut v: Vec<f64> = match category_tag(text) {
        Some(k) => {
            let mut base = seeded_rng(&["category", &format!("C{k}")]);
            let mut noise = seeded_rng(&["text", text]);
            (0..MOCK_EMBEDDING_DIM)
                .map(|_| base.gen_range(-1.0..1.0) + EMBEDDING_NOISE * noise.gen_range(-1.0..1.0))
                .collect()
        }
        None => {
            let mut rng = seeded_rng(&["text", text]);
            (0..MOCK_EMBEDDING_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect()
        }
    };
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

#[derive(Debug, Default, Clone, Copy)]
pub struct MockTransport;

fn need<'a>(request: &'a PromptRequest, name: &str) -> Result<&'a str, TransportError> {
    request.var(name).ok_or_else(|| TransportError {
        message: format!("mock {} request without {name}", request.role),
        retryable: false,
    })
}

impl Transport for MockTransport {
    fn chat(&self, _profile: &BackendProfile, request: &PromptRequest) -> Result<String, TransportError> {
        Ok(match request.role {
            PromptRole::Summarize | PromptRole::SummarizeMeeting => {
                let target = need(request, "target_words")?.parse().map_err(|_| TransportError {
                    message: "mock summarizer: target_words is not a number".into(),
                    retryable: false,
                })?;
                mock_summary(need(request, "document")?, target)
            }
            PromptRole::QuestionGen => {
                let limit = need(request, "num_questions")?.parse().unwrap_or(usize::MAX);
                mock_questions(need(request, "summaries_ladder")?, limit)
            }
            PromptRole::Answer => mock_answer(need(request, "document")?, need(request, "question")?),
            PromptRole::ClaimSplit => mock_claims(need(request, "answer")?),
            PromptRole::Introspect => mock_ratings(need(request, "questions_list")?),
            PromptRole::Entail => {
                let e = mock_entailment(need(request, "claim")?, need(request, "summary")?);
                (e as u8).to_string()
            }
        })
    }

    fn embed(&self, _profile: &BackendProfile, texts: &[String]) -> Result<Vec<Vec<f64>>, TransportError> {
        Ok(texts.iter().map(|t| mock_embedding(t)).collect())
    }

    fn entail(&self, _profile: &BackendProfile, claim: &str, summary: &str) -> Result<String, TransportError> {
        Ok((mock_entailment(claim, summary) as u8).to_string())
    }
}

/// Parameters of a generated planted corpus.
#[derive(Clone, Debug)]
pub struct PlantedCorpusSpec {
    pub documents: usize,
    pub categories: u32,
    /// Facts per category per document, inclusive range.
    pub facts_per_category: (usize, usize),
    /// Filler words per fact after the token, inclusive range.
    pub words_per_fact: (usize, usize),
    /// Probability that a category other than the first is missing from a
    /// document.
    pub absence_rate: f64,
    pub seed: u64,
}

impl Default for PlantedCorpusSpec {
    fn default() -> Self {
        Self {
            documents: 10,
            categories: 5,
            facts_per_category: (2, 4),
            words_per_fact: (5, 8),
            absence_rate: 0.0,
            seed: 7,
        }
    }
}

const VOCABULARY: [&str; 24] = [
    "patients", "trial", "dose", "outcome", "group", "reported", "measured", "weekly",
    "baseline", "placebo", "improved", "score", "analysis", "cohort", "treatment", "adverse",
    "signal", "data", "follow", "clinic", "arm", "change", "rate", "visit",
];

/// Deterministic planted corpus; fact lines appear in shuffled order.
pub fn planted_corpus(spec: &PlantedCorpusSpec) -> Vec<DocumentRecord> {
    use rand::seq::SliceRandom;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.documents)
        .map(|d| {
            let mut lines = Vec::new();
            let mut next_fact = 1u32;
            for c in 1..=spec.categories {
                if c > 1 && rng.gen_bool(spec.absence_rate.clamp(0.0, 1.0)) {
                    continue;
                }
                let k = rng.gen_range(spec.facts_per_category.0..=spec.facts_per_category.1);
                for _ in 0..k {
                    let n = rng.gen_range(spec.words_per_fact.0..=spec.words_per_fact.1);
                    let words: Vec<&str> =
                        (0..n.max(1)).map(|_| *VOCABULARY.choose(&mut rng).expect("non-empty")).collect();
                    let token = FactToken { category: c, fact: next_fact }.text();
                    next_fact += 1;
                    lines.push(format!("{token} {}.", words.join(" ")));
                }
            }
            lines.shuffle(&mut rng);
            DocumentRecord::new(format!("doc{d:03}"), lines.join("\n"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOC: &str = "C2F1 second category fact here.\nC1F2 first fact of top.\nC3F3 third one with words.";

    #[test]
    fn token_parsing() {
        assert_eq!(FactToken::parse("C2F13"), Some(FactToken { category: 2, fact: 13 }));
        assert_eq!(FactToken::parse("C2"), None);
        assert_eq!(FactToken::parse("CxF1"), None);
        assert_eq!(category_tag("What about C12?"), Some(12));
        assert!(contains_token("a C1F2. b", FactToken { category: 1, fact: 2 }));
        assert!(!contains_token("a C1F23 b", FactToken { category: 1, fact: 2 }));
    }

    #[test]
    fn summary_fills_by_priority_without_splitting() {
        // Facts are 5 words each.
        assert_eq!(mock_summary(DOC, 4), EMPTY_SUMMARY);
        assert_eq!(mock_summary(DOC, 5), "C1F2 first fact of top.");
        assert_eq!(mock_summary(DOC, 12), "C1F2 first fact of top. C2F1 second category fact here.");
        assert_eq!(mock_summary(DOC, 15).split_whitespace().count(), 15);
    }

    #[test]
    fn budget_20_keeps_top_two_facts() {
        let doc = "C3F3 gamma fact with eight words in total\nC1F1 alpha fact with eight words in total\nC2F2 beta fact with eight words in total";
        let s = mock_summary(doc, 20);
        assert!(s.contains("C1F1") && s.contains("C2F2") && !s.contains("C3F3"));
    }

    #[test]
    fn questions_one_per_category() {
        let q = mock_questions(DOC, 8);
        assert_eq!(q.lines().count(), 3);
        assert!(q.lines().all(|l| category_tag(l).is_some()));
        assert_eq!(mock_questions(DOC, 2).lines().count(), 2);
    }

    #[test]
    fn answer_and_claims() {
        let doc = format!("{DOC}\nC2F4 another second category fact.");
        let a = mock_answer(&doc, "What does the document report about C2?");
        assert_eq!(a.lines().count(), 2);
        assert_eq!(mock_answer(&doc, "What about C9?"), UNANSWERABLE);
        assert_eq!(mock_claims(&a).lines().count(), 2);
    }

    #[test]
    fn entailment_is_token_containment() {
        assert!(mock_entailment("- C2F1 second category fact here.", "x C2F1 y"));
        assert!(!mock_entailment("- C9F9 nothing.", "x C2F1 y"));
        assert!(!mock_entailment("no token", "x C2F1 y"));
    }

    #[test]
    fn embeddings_cluster_by_category() {
        let cos = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let a = mock_embedding("What does the document report about C2?");
        let b = mock_embedding("Which details describe C2 in this text?");
        let c = mock_embedding("What does the document report about C3?");
        assert!(cos(&a, &b) > 0.99);
        assert!(cos(&a, &c) < 0.65);
        assert_eq!(a, mock_embedding("What does the document report about C2?"));
        assert!((cos(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ratings_follow_priority() {
        let out = mock_ratings("Q1: about C3?\nQ2: about C1?\nQ3: nothing");
        assert_eq!(out, "Q1: 3 | planted priority rank 3\nQ2: 5 | planted priority rank 1\nQ3: 3 | no planted category");
    }

    #[test]
    fn planted_corpus_is_deterministic() {
        let spec = PlantedCorpusSpec::default();
        let a = planted_corpus(&spec);
        assert_eq!(a, planted_corpus(&spec));
        assert_eq!(a.len(), 10);
        for d in &a {
            let facts = planted_facts(&d.text);
            assert_eq!(facts.len(), d.text.lines().count());
            assert!(facts.iter().all(|f| (6..=9).contains(&word_count(&f.sentence))));
        }
    }
}
