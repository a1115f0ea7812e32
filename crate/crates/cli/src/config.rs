use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use csm_core::analysis::{CrossMode, ObservedSource};
use csm_core::domain::BudgetSet;
use csm_core::gateway::{BackendKind, BackendProfile};
use csm_core::metrics::WeightScheme;
use csm_core::prompts::{PromptRole, PromptSet};
use csm_core::stages::{ClusterParams, INGESTED_BACKEND};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

fn default_replicates() -> u32 {
    5
}
fn default_questions() -> usize {
    8
}
fn default_introspection_runs() -> u32 {
    5
}
fn default_scheme() -> WeightScheme {
    WeightScheme::Uniform
}

/// Which backend plays each model role.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleBindings {
    #[serde(default)]
    pub summarizers: Vec<String>,
    pub question_gen: String,
    pub embedding: String,
    pub answer: String,
    pub claim_split: String,
    pub entailment: String,
    #[serde(default)]
    pub raters: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: String,
    /// JSON-lines file of `{"doc_id"?, "text"}`; relative paths resolve
    /// against the config file's directory.
    pub corpus_path: PathBuf,
    /// Label used in alignment rows; defaults to the run id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    #[serde(default)]
    pub budgets: BudgetSet,
    #[serde(default = "default_replicates")]
    pub replicates: u32,
    pub backends: Vec<BackendProfile>,
    pub roles: RoleBindings,
    #[serde(default)]
    pub clustering: ClusterParams,
    #[serde(default = "default_questions")]
    pub questions_per_doc: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_scheme")]
    pub aggregation: WeightScheme,
    /// Column compared against perceived salience; defaults to the largest
    /// budget.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed_source: Option<ObservedSource>,
    /// Summarizer whose ladders feed question generation; defaults to the
    /// first summarizer, or the ingested summaries when there is none.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qg_source_backend: Option<String>,
    #[serde(default = "default_introspection_runs")]
    pub introspection_runs: u32,
    #[serde(default)]
    pub cross_mode: CrossMode,
    /// Use the meeting-transcript summarization prompt.
    #[serde(default)]
    pub meeting: bool,
    /// Prompt template files overriding the built-in text, by role.
    #[serde(default)]
    pub prompts: BTreeMap<PromptRole, PathBuf>,
    /// CSV of human ratings, copied into the run at init.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_ratings: Option<PathBuf>,
    /// Display grouping of backends; not used in any computation.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub families: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let config: RunConfig = serde_json::from_str(&raw).map_err(|e| CliError::json(path, e))?;
        config.validate()?;
        Ok(config)
    }

    pub fn dataset(&self) -> &str {
        self.dataset.as_deref().unwrap_or(&self.run_id)
    }

    pub fn observed_source(&self) -> ObservedSource {
        self.observed_source
            .unwrap_or_else(|| ObservedSource::Budget(self.budgets.largest()))
    }

    pub fn qg_source(&self) -> String {
        self.qg_source_backend
            .clone()
            .or_else(|| self.roles.summarizers.first().cloned())
            .unwrap_or_else(|| INGESTED_BACKEND.to_string())
    }

    pub fn summarize_role(&self) -> PromptRole {
        if self.meeting {
            PromptRole::SummarizeMeeting
        } else {
            PromptRole::Summarize
        }
    }

    pub fn backend(&self, id: &str) -> Result<&BackendProfile> {
        self.backends
            .iter()
            .find(|b| b.backend_id == id)
            .ok_or_else(|| CliError::Validation(format!("backend {id:?} is not defined")))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Validation(m));
        if self.run_id.is_empty()
            || !self
                .run_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
            || self.run_id.starts_with('.')
        {
            return bad(format!("run_id {:?} must be non-empty and use only [A-Za-z0-9._-]", self.run_id));
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if self.questions_per_doc == 0 {
            return bad("questions_per_doc must be at least 1".into());
        }
        if self.introspection_runs == 0 {
            return bad("introspection_runs must be at least 1".into());
        }
        if self.clustering.min_cluster_size == 0
            || !(self.clustering.link_threshold > 0.0 && self.clustering.link_threshold <= 2.0)
        {
            return bad("clustering needs min_cluster_size >= 1 and link_threshold in (0, 2]".into());
        }

        let mut ids = BTreeSet::new();
        for b in &self.backends {
            b.validate()?;
            if b.backend_id == INGESTED_BACKEND {
                return bad(format!("backend id {INGESTED_BACKEND:?} is reserved"));
            }
            if !ids.insert(b.backend_id.as_str()) {
                return bad(format!("backend {:?} defined twice", b.backend_id));
            }
        }

        use BackendKind::*;
        let r = &self.roles;
        let chat: &[BackendKind] = &[Chat, Mock];
        let mut checks: Vec<(&str, &str, &[BackendKind])> = vec![
            ("question_gen", &r.question_gen, chat),
            ("embedding", &r.embedding, &[Embedding, Mock]),
            ("answer", &r.answer, chat),
            ("claim_split", &r.claim_split, chat),
            ("entailment", &r.entailment, &[Chat, Entailment, Mock]),
        ];
        checks.extend(r.summarizers.iter().map(|s| ("summarizers", s.as_str(), chat)));
        checks.extend(r.raters.iter().map(|s| ("raters", s.as_str(), chat)));
        for (role, id, kinds) in checks {
            let kind = self.backend(id)?.kind;
            if !kinds.contains(&kind) {
                return bad(format!("role {role}: backend {id:?} has kind {}", kind.name()));
            }
        }
        let unique: BTreeSet<&String> = r.summarizers.iter().collect();
        if unique.len() != r.summarizers.len() {
            return bad("a summarizer is listed twice".into());
        }
        let source = self.qg_source();
        if source != INGESTED_BACKEND && !r.summarizers.contains(&source) {
            return bad(format!("qg_source_backend {source:?} is not a summarizer"));
        }
        if let Some(ObservedSource::Budget(b)) = self.observed_source {
            if !self.budgets.contains(b) {
                return bad(format!("observed_source budget {b} is not in budgets"));
            }
        }
        Ok(())
    }

    /// Built-in prompts with the configured overrides read from disk.
    pub fn resolve_prompts(&self, base_dir: &Path) -> Result<PromptSet> {
        let mut set = PromptSet::default();
        for (role, path) in &self.prompts {
            let full = base_dir.join(path);
            let text = std::fs::read_to_string(&full).map_err(|e| CliError::io(&full, e))?;
            set = set.with_override(*role, text)?;
        }
        Ok(set)
    }
}

/// What `init` freezes into the run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub config: RunConfig,
    pub prompts: PromptSet,
}
