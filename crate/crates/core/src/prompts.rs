//! Prompt templates with named `{placeholder}` slots.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptRole {
    Summarize,
    SummarizeMeeting,
    QuestionGen,
    Answer,
    ClaimSplit,
    Introspect,
    Entail,
}

impl PromptRole {
    pub const ALL: [PromptRole; 7] = [
        Self::Summarize,
        Self::SummarizeMeeting,
        Self::QuestionGen,
        Self::Answer,
        Self::ClaimSplit,
        Self::Introspect,
        Self::Entail,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Summarize => "summarize",
            Self::SummarizeMeeting => "summarize_meeting",
            Self::QuestionGen => "question_gen",
            Self::Answer => "answer",
            Self::ClaimSplit => "claim_split",
            Self::Introspect => "introspect",
            Self::Entail => "entail",
        }
    }

    /// Placeholders a template for this role must contain.
    pub fn required(self) -> &'static [&'static str] {
        match self {
            Self::Summarize | Self::SummarizeMeeting => &["document", "target_words"],
            Self::QuestionGen => &["summaries_ladder", "num_questions"],
            Self::Answer => &["document", "question"],
            Self::ClaimSplit => &["answer"],
            Self::Introspect => &["questions_list"],
            Self::Entail => &["claim", "summary"],
        }
    }

    /// Placeholders a template for this role may contain.
    pub fn allowed(self) -> &'static [&'static str] {
        match self {
            Self::Summarize | Self::SummarizeMeeting => &["document", "target_words"],
            Self::QuestionGen => &["summaries_ladder", "num_questions", "document"],
            Self::Answer => &["document", "question"],
            Self::ClaimSplit => &["answer", "question"],
            Self::Introspect => &["questions_list"],
            Self::Entail => &["claim", "summary"],
        }
    }

    pub fn default_text(self) -> &'static str {
        match self {
            Self::Summarize => SUMMARIZE,
            Self::SummarizeMeeting => SUMMARIZE_MEETING,
            Self::QuestionGen => QUESTION_GEN,
            Self::Answer => ANSWER,
            Self::ClaimSplit => CLAIM_SPLIT,
            Self::Introspect => INTROSPECT,
            Self::Entail => ENTAIL,
        }
    }
}

impl fmt::Display for PromptRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PromptRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown prompt role {s:?}")))
    }
}

/// Token the answering model emits when the document does not address the
/// question.
pub const UNANSWERABLE: &str = "UNANSWERABLE";

const SUMMARIZE: &str = "\
Summarize the following document in about {target_words} words. \
Write one paragraph of plain text with no title, preamble or bullet points.

Document:
{document}

Summary ({target_words} words):";

const SUMMARIZE_MEETING: &str = "\
The text below is a meeting transcript with one `[Speaker]: utterance` turn per line. \
Summarize the meeting in about {target_words} words. \
Write one paragraph of plain text with no title, preamble or bullet points.

Transcript:
{document}

Summary ({target_words} words):";

const QUESTION_GEN: &str = "\
Below are summaries of the same document, written under increasing length limits.

{summaries_ladder}

Write {num_questions} questions that each of these summaries answers in its own way. \
Every question must be answerable by most documents of this genre, not only by this one. \
Prefer questions that bring out what the longer summaries add over the shorter ones. \
Return a numbered list with one question per line and nothing else.";

const ANSWER: &str = "\
Answer the question using only information stated in the document. \
Keep the wording of the document where possible. \
If the document does not address the question, reply with exactly UNANSWERABLE.

Document:
{document}

Question: {question}

Answer:";

const CLAIM_SPLIT: &str = "\
Split the answer below into atomic claims. An atomic claim is a short, \
self-contained declarative sentence stating exactly one fact. \
Return one claim per line, each line starting with \"- \", and nothing else.

Question: {question}
Answer: {answer}

Claims:";

const INTROSPECT: &str = "\
The questions below describe information that summaries of documents from one genre may contain. \
For each question, rate how important it is that a summary answers it, on a scale from \
1 (least important) to 5 (most important), and give a one-sentence rationale.

{questions_list}

Reply with exactly one line per question in the form `Q<number>: <rating> | <rationale>`.";

const ENTAIL: &str = "\
Document:
{summary}

Claim: {claim}

Is the claim fully supported by the document? Reply with 1 if it is supported and 0 otherwise.";

/// Extract `{name}` placeholders (lowercase ASCII and underscores).
fn placeholders(text: &str) -> BTreeSet<&str> {
    let mut out = BTreeSet::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let rest = &text[i + 1..];
            if let Some(end) = rest.find('}') {
                let name = &rest[..end];
                if !name.is_empty() && name.bytes().all(|c| c.is_ascii_lowercase() || c == b'_') {
                    out.insert(name);
                    i += end + 2;
                    continue;
                }
            }
        }
        i += 1;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub role: PromptRole,
    pub text: String,
}

/// A rendered prompt together with the values substituted into it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptRequest {
    pub role: PromptRole,
    pub rendered: String,
    pub vars: BTreeMap<String, String>,
}

impl PromptRequest {
    pub fn var(&self, name: &str) -> Option<&str> {
        self.vars.get(name).map(String::as_str)
    }
}

impl PromptTemplate {
    pub fn new(role: PromptRole, text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        let found = placeholders(&text);
        if let Some(missing) = role.required().iter().find(|p| !found.contains(*p)) {
            return Err(Error::Config(format!(
                "{role} template lacks placeholder {{{missing}}}"
            )));
        }
        if let Some(extra) = found.iter().find(|p| !role.allowed().contains(p)) {
            return Err(Error::Config(format!(
                "{role} template uses unknown placeholder {{{extra}}}"
            )));
        }
        Ok(Self { role, text })
    }

    pub fn default_for(role: PromptRole) -> Self {
        Self::new(role, role.default_text()).expect("built-in templates are valid")
    }

    pub fn render(&self, vars: &[(&str, String)]) -> Result<PromptRequest> {
        let vars: BTreeMap<String, String> =
            vars.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        let found = placeholders(&self.text);
        let mut rendered = String::with_capacity(self.text.len());
        let mut rest = self.text.as_str();
        while let Some(start) = rest.find('{') {
            rendered.push_str(&rest[..start]);
            let tail = &rest[start..];
            let matched = tail[1..]
                .find('}')
                .map(|end| &tail[1..end + 1])
                .filter(|name| found.contains(name));
            match matched {
                Some(name) => {
                    let value = vars.get(name).ok_or_else(|| {
                        Error::Contract(format!("{} prompt rendered without {{{name}}}", self.role))
                    })?;
                    rendered.push_str(value);
                    rest = &tail[name.len() + 2..];
                }
                None => {
                    rendered.push('{');
                    rest = &tail[1..];
                }
            }
        }
        rendered.push_str(rest);
        Ok(PromptRequest {
            role: self.role,
            rendered,
            vars,
        })
    }
}

/// One template per role; roles without an override use the built-in text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    templates: BTreeMap<PromptRole, String>,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            templates: PromptRole::ALL
                .into_iter()
                .map(|r| (r, r.default_text().to_string()))
                .collect(),
        }
    }
}

impl PromptSet {
    pub fn with_override(mut self, role: PromptRole, text: impl Into<String>) -> Result<Self> {
        let t = PromptTemplate::new(role, text)?;
        self.templates.insert(role, t.text);
        Ok(self)
    }

    pub fn get(&self, role: PromptRole) -> Result<PromptTemplate> {
        match self.templates.get(&role) {
            Some(text) => PromptTemplate::new(role, text.clone()),
            None => Ok(PromptTemplate::default_for(role)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        for role in PromptRole::ALL {
            PromptTemplate::default_for(role);
        }
    }

    #[test]
    fn render_substitutes_and_keeps_literal_braces() {
        let t = PromptTemplate::new(PromptRole::Summarize, "In {target_words} words {json}: {document}").unwrap_err();
        assert!(matches!(t, Error::Config(_)));
        let t = PromptTemplate::new(PromptRole::Summarize, "In {target_words} words {x y}: {document}").unwrap();
        let r = t
            .render(&[("target_words", "20".into()), ("document", "Text {target_words}".into())])
            .unwrap();
        assert_eq!(r.rendered, "In 20 words {x y}: Text {target_words}");
        assert_eq!(r.var("target_words"), Some("20"));
    }

    #[test]
    fn missing_required_placeholder_is_rejected() {
        assert!(PromptTemplate::new(PromptRole::Answer, "{document} only").is_err());
    }

    #[test]
    fn render_requires_all_values() {
        let t = PromptTemplate::default_for(PromptRole::Answer);
        assert!(t.render(&[("document", "d".into())]).is_err());
    }

    #[test]
    fn role_names_round_trip() {
        for role in PromptRole::ALL {
            assert_eq!(role.name().parse::<PromptRole>().unwrap(), role);
        }
    }
}
