//! Pipeline steps: summarization probe, question generation, clustering with
//! review overrides, reference answers and claims, entailment scoring and
//! map assembly.

mod answers;
mod cluster;
mod questions;
mod scoring;
mod summarize;

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use answers::{answer_questions, decompose_claims, parse_claims, ClaimOutcome};
pub use cluster::{
    apply_merge_overrides, cluster_questions, cosine_similarity, review_report, select_representatives,
    ClusterParams, MergeOverride,
};
pub use questions::{embed_questions, generate_questions, parse_question_list, summary_ladder, QuestionOutcome};
pub use scoring::{build_csms, score_entailments, topic_presence, CsmBundle};
pub use summarize::{
    bucket_budget, generate_summaries, ingest_summaries, IngestOutcome, IngestRow, INGESTED_BACKEND,
};

use crate::error::{Error, Result};

/// Run stages in dependency order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Summarize,
    Qgen,
    Cluster,
    ReviewApply,
    Answer,
    Claims,
    Entail,
    Build,
    Introspect,
    Metrics,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 11] = [
        Self::Summarize,
        Self::Qgen,
        Self::Cluster,
        Self::ReviewApply,
        Self::Answer,
        Self::Claims,
        Self::Entail,
        Self::Build,
        Self::Introspect,
        Self::Metrics,
        Self::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Summarize => "summarize",
            Self::Qgen => "qgen",
            Self::Cluster => "cluster",
            Self::ReviewApply => "review-apply",
            Self::Answer => "answer",
            Self::Claims => "claims",
            Self::Entail => "entail",
            Self::Build => "build",
            Self::Introspect => "introspect",
            Self::Metrics => "metrics",
            Self::Report => "report",
        }
    }

    /// Stages whose outputs this stage reads.
    pub fn upstream(self) -> &'static [Stage] {
        use Stage::*;
        match self {
            Summarize => &[],
            Qgen => &[Summarize],
            Cluster => &[Qgen],
            ReviewApply => &[Cluster],
            Answer => &[ReviewApply],
            Claims => &[Answer],
            Entail => &[Summarize, Claims],
            Build => &[Claims, Entail],
            Introspect => &[ReviewApply],
            Metrics => &[Summarize, Claims, Entail, Build, Introspect],
            Report => &[Build, Metrics],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Pending,
    Complete,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageManifest {
    pub run_id: String,
    pub stage: Stage,
    pub status: StageStatus,
    /// Digest over the upstream output digests and the stage's parameters.
    pub input_digest: String,
    /// Digest over the stage's output files.
    pub output_digest: String,
}

/// Map `f` over `items` on a pool of `workers` threads. Results keep input
/// order; on failure the error of the earliest failing item is returned.
pub(crate) fn par_map<T, U, F>(workers: usize, items: &[T], f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| items.par_iter().map(&f).collect::<Vec<_>>())
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
            assert!(s.upstream().iter().all(|u| *u < s));
        }
    }

    #[test]
    fn par_map_keeps_order_and_first_error() {
        let items: Vec<u32> = (0..50).collect();
        let out = par_map(4, &items, |x| Ok(x * 2)).unwrap();
        assert_eq!(out, items.iter().map(|x| x * 2).collect::<Vec<_>>());
        let err = par_map(4, &items, |&x| {
            if x % 10 == 7 {
                Err(Error::InvalidInput(x.to_string()))
            } else {
                Ok(x)
            }
        })
        .unwrap_err();
        assert_eq!(err.to_string(), "invalid input: 7");
    }
}
