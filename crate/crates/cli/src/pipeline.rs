use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use csm_core::analysis::{
    alignment_report, build_agreement_matrices, elicit_perceived_salience, ingest_human_ratings, render_reports,
    AgreementMatrix, AlignmentInputs, AlignmentReport, MetricRow, ReportInputs,
};
use csm_core::domain::{
    AtomicClaim, ClaimVerdict, CorpusCsm, DocumentCsm, DocumentRecord, QuestionRecord, ReferenceAnswer,
    SalienceRating, SummaryRecord, TopicCluster,
};
use csm_core::gateway::{BackendProfile, Gateway, ResponseCache};
use csm_core::prompts::{PromptRole, PromptTemplate};
use csm_core::stages::{
    answer_questions, apply_merge_overrides, build_csms, cluster_questions, decompose_claims, embed_questions,
    generate_questions, generate_summaries, review_report, score_entailments, topic_presence, CsmBundle,
    MergeOverride, Stage, StageStatus,
};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{RunConfig, Snapshot};
use crate::error::{CliError, Result};
use crate::rundir::{
    read_json, read_jsonl, stage_extra_inputs, stage_outputs, write_bytes, write_jsonl, Manifest, RunDir, CORPUS,
    HUMAN_RATINGS, INGESTED, MERGE_OVERRIDE, REVIEW_REPORT, SNAPSHOT,
};

/// Response cache location: `CSM_CACHE_DIR`, else `<root>/cache`.
pub fn cache_dir(root: &Path) -> PathBuf {
    match std::env::var_os("CSM_CACHE_DIR") {
        Some(d) if !d.is_empty() => PathBuf::from(d),
        _ => root.join("cache"),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageRun {
    UpToDate,
    Ran,
}

/// An initialized run directory with its frozen configuration.
pub struct Run {
    pub dir: RunDir,
    pub snapshot: Snapshot,
    gateway: Gateway,
}

impl Run {
    pub fn open(root: &Path, run_id: &str) -> Result<Self> {
        let dir = RunDir::new(root, run_id);
        if !dir.exists() {
            return Err(CliError::Dependency(format!(
                "run {run_id} not found under {}; create it with `csm init`",
                root.join("runs").display()
            )));
        }
        let snapshot: Snapshot = read_json(&dir.file(SNAPSHOT))?;
        let cache = ResponseCache::open(cache_dir(root))?;
        let gateway = Gateway::new(Some(cache)).with_entail_prompt(snapshot.prompts.get(PromptRole::Entail)?);
        Ok(Self { dir, snapshot, gateway })
    }

    pub fn config(&self) -> &RunConfig {
        &self.snapshot.config
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn template(&self, role: PromptRole) -> Result<PromptTemplate> {
        Ok(self.snapshot.prompts.get(role)?)
    }

    pub fn profile(&self, id: &str) -> Result<BackendProfile> {
        self.config().backend(id).cloned()
    }

    pub fn load<T: DeserializeOwned>(&self, rel: &str) -> Result<Vec<T>> {
        read_jsonl(&self.dir.file(rel))
    }

    fn save<T: Serialize>(&self, rel: &str, rows: &[T]) -> Result<()> {
        write_jsonl(&self.dir.file(rel), rows)
    }

    pub fn corpus(&self) -> Result<Vec<DocumentRecord>> {
        self.load(CORPUS)
    }

    /// What the stage's recorded input digest must be for its outputs to be
    /// current.
    pub fn expected_input_digest(&self, stage: Stage, manifest: &Manifest) -> Result<String> {
        let mut h = Sha256::new();
        h.update(stage.name());
        h.update(b"\0");
        h.update(self.dir.digest(&[SNAPSHOT, CORPUS])?);
        for up in stage.upstream() {
            h.update(up.name());
            h.update(&manifest.get(*up).output_digest);
        }
        h.update(self.dir.digest(stage_extra_inputs(stage))?);
        Ok(hex::encode(h.finalize()))
    }

    /// Refuse when an upstream stage is incomplete, stale, or its outputs no
    /// longer match what it recorded.
    pub fn check_upstream(&self, stage: Stage, manifest: &Manifest) -> Result<()> {
        for &up in stage.upstream() {
            self.require(up, stage.name(), manifest)?;
        }
        Ok(())
    }

    /// Refuse unless `stage` completed and its outputs are still current.
    pub fn require(&self, stage: Stage, needed_by: &str, manifest: &Manifest) -> Result<()> {
        let m = manifest.get(stage);
        if m.status != StageStatus::Complete {
            return Err(CliError::Dependency(format!(
                "{needed_by} needs {stage}, which has not completed; run `csm run {} {stage}` first",
                manifest.run_id
            )));
        }
        let on_disk = self.dir.digest(stage_outputs(stage))?;
        if on_disk != m.output_digest {
            return Err(CliError::Dependency(format!(
                "outputs of {stage} changed since it ran (recorded {}, found {}); re-run {stage} before {needed_by}",
                short(&m.output_digest),
                short(&on_disk)
            )));
        }
        if m.input_digest != self.expected_input_digest(stage, manifest)? {
            return Err(CliError::Dependency(format!(
                "{stage} is stale: its inputs changed after it ran; re-run {stage} before {needed_by}"
            )));
        }
        Ok(())
    }

    pub fn is_up_to_date(&self, stage: Stage, manifest: &Manifest) -> Result<bool> {
        let m = manifest.get(stage);
        Ok(m.status == StageStatus::Complete
            && m.input_digest == self.expected_input_digest(stage, manifest)?
            && m.output_digest == self.dir.digest(stage_outputs(stage))?)
    }

    /// Run one stage unless its outputs are current.
    pub fn run_stage(&self, stage: Stage) -> Result<StageRun> {
        let mut manifest = self.dir.manifest()?;
        self.check_upstream(stage, &manifest)?;
        if stage == Stage::ReviewApply && !self.dir.file(MERGE_OVERRIDE).is_file() {
            return Err(CliError::Dependency(self.gate_message()));
        }
        if self.is_up_to_date(stage, &manifest)? {
            return Ok(StageRun::UpToDate);
        }
        let input_digest = self.expected_input_digest(stage, &manifest)?;
        manifest.get_mut(stage).status = StageStatus::Pending;
        self.dir.save_manifest(&manifest)?;

        for rel in stage_outputs(stage) {
            let p = self.dir.file(rel);
            if p.is_dir() {
                fs::remove_dir_all(&p).map_err(|e| CliError::io(&p, e))?;
            }
        }
        self.execute(stage)?;

        let m = manifest.get_mut(stage);
        m.status = StageStatus::Complete;
        m.input_digest = input_digest;
        m.output_digest = self.dir.digest(stage_outputs(stage))?;
        self.dir.save_manifest(&manifest)?;
        Ok(StageRun::Ran)
    }

    pub fn gate_message(&self) -> String {
        format!(
            "manual review required: read {} and write {} (use {{}} to keep the clusters as they are), then continue with `csm run {} all`",
            self.dir.file(REVIEW_REPORT).display(),
            self.dir.file(MERGE_OVERRIDE).display(),
            self.config().run_id
        )
    }

    fn execute(&self, stage: Stage) -> Result<()> {
        match stage {
            Stage::Summarize => self.summarize(),
            Stage::Qgen => self.qgen(),
            Stage::Cluster => self.cluster(),
            Stage::ReviewApply => self.review_apply(),
            Stage::Answer => self.answer(),
            Stage::Claims => self.claims(),
            Stage::Entail => self.entail(),
            Stage::Build => self.build(),
            Stage::Introspect => self.introspect(),
            Stage::Metrics => self.metrics(),
            Stage::Report => self.report(),
        }
    }

    /// Summaries of every configured summarizer; `temperature` replaces each
    /// profile's own.
    pub fn probe(&self, corpus: &[DocumentRecord], temperature: Option<f64>) -> Result<Vec<SummaryRecord>> {
        let c = self.config();
        let template = self.template(c.summarize_role())?;
        let mut out = Vec::new();
        for id in &c.roles.summarizers {
            let mut profile = self.profile(id)?;
            if let Some(t) = temperature {
                profile.temperature = t;
            }
            log::info!("summarizing with {id}");
            out.extend(generate_summaries(corpus, &c.budgets, c.replicates, &profile, &template, &self.gateway)?);
        }
        Ok(out)
    }

    fn summarize(&self) -> Result<()> {
        let corpus = self.corpus()?;
        let mut out = self.probe(&corpus, None)?;
        let ingested = self.dir.file(INGESTED);
        if ingested.is_file() {
            out.extend(read_jsonl::<SummaryRecord>(&ingested)?);
        }
        if out.is_empty() {
            return Err(CliError::Validation(
                "no summarizers are configured and no summaries were ingested".into(),
            ));
        }
        self.save("summaries.jsonl", &out)
    }

    fn qgen(&self) -> Result<()> {
        let c = self.config();
        let corpus = self.corpus()?;
        let summaries: Vec<SummaryRecord> = self.load("summaries.jsonl")?;
        let outcome = generate_questions(
            &corpus,
            &summaries,
            &c.qg_source(),
            &c.budgets,
            c.questions_per_doc,
            &self.profile(&c.roles.question_gen)?,
            &self.template(PromptRole::QuestionGen)?,
            &self.gateway,
        )?;
        if !outcome.skipped_docs.is_empty() {
            log::warn!("no parseable questions for {}", outcome.skipped_docs.join(", "));
        }
        if outcome.dropped_lines > 0 {
            log::info!("{} non-question lines dropped", outcome.dropped_lines);
        }
        let mut questions = outcome.questions;
        embed_questions(&mut questions, &self.profile(&c.roles.embedding)?, &self.gateway)?;
        self.save("questions.jsonl", &questions)
    }

    fn cluster(&self) -> Result<()> {
        let questions: Vec<QuestionRecord> = self.load("questions.jsonl")?;
        let clusters = cluster_questions(&questions, &self.config().clustering)?;
        let report = review_report(&clusters, &questions)?;
        self.save("clusters.jsonl", &clusters)?;
        write_bytes(&self.dir.file(REVIEW_REPORT), report.as_bytes())
    }

    fn review_apply(&self) -> Result<()> {
        let questions: Vec<QuestionRecord> = self.load("questions.jsonl")?;
        let clusters: Vec<TopicCluster> = self.load("clusters.jsonl")?;
        let path = self.dir.file(MERGE_OVERRIDE);
        let overrides: MergeOverride = read_json(&path)?;
        let topics = apply_merge_overrides(clusters, &overrides, &questions)?;
        self.save("topics.jsonl", &topics)
    }

    fn answer(&self) -> Result<()> {
        let c = self.config();
        let topics: Vec<TopicCluster> = self.load("topics.jsonl")?;
        let answers = answer_questions(
            &self.corpus()?,
            &topics,
            &self.profile(&c.roles.answer)?,
            &self.template(PromptRole::Answer)?,
            &self.gateway,
        )?;
        self.save("answers.jsonl", &answers)
    }

    fn claims(&self) -> Result<()> {
        let c = self.config();
        let topics: Vec<TopicCluster> = self.load("topics.jsonl")?;
        let answers: Vec<ReferenceAnswer> = self.load("answers.jsonl")?;
        let outcome = decompose_claims(
            &answers,
            &topics,
            &self.profile(&c.roles.claim_split)?,
            &self.template(PromptRole::ClaimSplit)?,
            &self.gateway,
        )?;
        if outcome.coerced_absent > 0 {
            log::warn!("{} answers yielded no claim and count as absent", outcome.coerced_absent);
        }
        self.save("claims.jsonl", &outcome.claims)?;
        self.save("answers.final.jsonl", &outcome.answers)
    }

    fn entail(&self) -> Result<()> {
        let claims: Vec<AtomicClaim> = self.load("claims.jsonl")?;
        let summaries: Vec<SummaryRecord> = self.load("summaries.jsonl")?;
        let verdicts = score_entailments(
            &claims,
            &summaries,
            &self.profile(&self.config().roles.entailment)?,
            &self.gateway,
        )?;
        self.save("verdicts.jsonl", &verdicts)
    }

    fn build(&self) -> Result<()> {
        let answers: Vec<ReferenceAnswer> = self.load("answers.final.jsonl")?;
        let verdicts: Vec<ClaimVerdict> = self.load("verdicts.jsonl")?;
        let bundle = build_csms(&verdicts, &topic_presence(&answers), &self.config().budgets)?;
        self.save("csm/documents.jsonl", &bundle.documents)?;
        self.save("csm/replicates.jsonl", &bundle.per_replicate)?;
        self.save("csm/mean.jsonl", &bundle.mean)
    }

    pub fn bundle(&self) -> Result<CsmBundle> {
        Ok(CsmBundle {
            documents: self.load::<DocumentCsm>("csm/documents.jsonl")?,
            per_replicate: self.load::<CorpusCsm>("csm/replicates.jsonl")?,
            mean: self.load::<CorpusCsm>("csm/mean.jsonl")?,
        })
    }

    fn introspect(&self) -> Result<()> {
        let c = self.config();
        let topics: Vec<TopicCluster> = self.load("topics.jsonl")?;
        let template = self.template(PromptRole::Introspect)?;
        let mut ratings = Vec::new();
        for id in &c.roles.raters {
            let outcome = elicit_perceived_salience(
                &topics,
                &self.profile(id)?,
                &template,
                &self.gateway,
                c.introspection_runs,
                c.base_seed,
            )?;
            if !outcome.discarded_runs.is_empty() {
                log::warn!("{id}: runs {:?} discarded", outcome.discarded_runs);
            }
            if outcome.omitted_items > 0 {
                log::warn!("{id}: {} ratings missing from kept runs", outcome.omitted_items);
            }
            ratings.extend(outcome.ratings);
        }
        self.save("ratings.jsonl", &ratings)
    }

    fn human_ratings(&self, topics: &BTreeSet<String>) -> Result<Vec<SalienceRating>> {
        let path = self.dir.file(HUMAN_RATINGS);
        if !path.is_file() {
            return Ok(Vec::new());
        }
        let f = fs::File::open(&path).map_err(|e| CliError::io(&path, e))?;
        Ok(ingest_human_ratings(f, topics)?)
    }

    fn metrics(&self) -> Result<()> {
        let c = self.config();
        let summaries: Vec<SummaryRecord> = self.load("summaries.jsonl")?;
        let answers: Vec<ReferenceAnswer> = self.load("answers.final.jsonl")?;
        let claims: Vec<AtomicClaim> = self.load("claims.jsonl")?;
        let verdicts: Vec<ClaimVerdict> = self.load("verdicts.jsonl")?;
        let topics: Vec<TopicCluster> = self.load("topics.jsonl")?;
        let perceived: Vec<SalienceRating> = self.load("ratings.jsonl")?;
        let bundle = self.bundle()?;
        let topic_ids: BTreeSet<String> = topics.iter().map(|t| t.topic_id.clone()).collect();
        let human = self.human_ratings(&topic_ids)?;

        let matrices = build_agreement_matrices(&claims, &verdicts, &c.budgets, c.cross_mode)?;
        let rows = csm_core::analysis::metric_rows(&summaries, &answers, &verdicts, &bundle, &matrices, &c.budgets)?;
        let alignment = alignment_report(&AlignmentInputs {
            dataset: c.dataset(),
            topics: &topic_ids,
            perceived: &perceived,
            per_replicate: &bundle.per_replicate,
            mean: &bundle.mean,
            human: &human,
            source: c.observed_source(),
            budgets: &c.budgets,
        })?;
        self.save("metrics/metrics.jsonl", &rows)?;
        self.save("metrics/agreement.jsonl", &matrices)?;
        self.save("metrics/alignment.jsonl", &alignment.rows)
    }

    fn report(&self) -> Result<()> {
        let c = self.config();
        let bundle = self.bundle()?;
        let topics: Vec<TopicCluster> = self.load("topics.jsonl")?;
        let matrices: Vec<AgreementMatrix> = self.load("metrics/agreement.jsonl")?;
        let metrics: Vec<MetricRow> = self.load("metrics/metrics.jsonl")?;
        let alignment = AlignmentReport {
            rows: self.load("metrics/alignment.jsonl")?,
        };
        render_reports(
            &self.dir.file("report"),
            &ReportInputs {
                budgets: &c.budgets,
                scheme: c.aggregation,
                csms: &bundle.mean,
                topics: &topics,
                matrices: &matrices,
                alignment: &alignment,
                metrics: &metrics,
            },
        )?;
        Ok(())
    }
}

fn short(digest: &str) -> &str {
    if digest.is_empty() {
        "nothing"
    } else {
        &digest[..digest.len().min(12)]
    }
}
