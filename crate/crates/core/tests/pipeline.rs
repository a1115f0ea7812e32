use std::collections::BTreeSet;

use csm_core::domain::BudgetSet;
use csm_core::gateway::mock::{category_tag, planted_corpus, MockTransport, PlantedCorpusSpec};
use csm_core::gateway::{BackendKind, BackendProfile, Gateway, ResponseCache, Transport, TransportError};
use csm_core::metrics::incremental_consistency;
use csm_core::prompts::{PromptRequest, PromptRole, PromptTemplate};
use csm_core::stages::{
    answer_questions, apply_merge_overrides, build_csms, cluster_questions, decompose_claims, embed_questions,
    generate_questions, generate_summaries, score_entailments, topic_presence, ClusterParams, MergeOverride,
};
use csm_core::Error;

fn t(role: PromptRole) -> PromptTemplate {
    PromptTemplate::default_for(role)
}

#[test]
fn planted_corpus_through_every_stage() {
    let corpus = planted_corpus(&PlantedCorpusSpec {
        documents: 6,
        absence_rate: 0.3,
        ..PlantedCorpusSpec::default()
    });
    let budgets = BudgetSet::default();
    let m = BackendProfile::mock("m");
    let gw = Gateway::new(None);

    let summaries = generate_summaries(&corpus, &budgets, 2, &m, &t(PromptRole::Summarize), &gw).unwrap();
    assert_eq!(summaries.len(), 6 * 5 * 2);
    for s in &summaries {
        assert!(s.word_count <= s.budget.words() as usize || s.text == "(no content)");
    }

    let mut qs = generate_questions(&corpus, &summaries, "m", &budgets, 8, &m, &t(PromptRole::QuestionGen), &gw)
        .unwrap()
        .questions;
    embed_questions(&mut qs, &m, &gw).unwrap();
    let clusters = cluster_questions(&qs, &ClusterParams { min_cluster_size: 2, link_threshold: 0.35 }).unwrap();
    for c in &clusters {
        let tags: BTreeSet<Option<u32>> = c
            .member_ids
            .iter()
            .map(|id| category_tag(&qs.iter().find(|q| &q.question_id == id).unwrap().text))
            .collect();
        assert_eq!(tags.len(), 1, "cluster {} mixes categories", c.topic_id);
    }
    let topics = apply_merge_overrides(clusters.clone(), &MergeOverride::default(), &qs).unwrap();
    assert_eq!(topics, clusters);

    let answers = answer_questions(&corpus, &topics, &m, &t(PromptRole::Answer), &gw).unwrap();
    assert_eq!(answers.len(), corpus.len() * topics.len());
    assert!(answers.iter().any(|a| a.is_absent()), "absence_rate should leave gaps");
    let claims = decompose_claims(&answers, &topics, &m, &t(PromptRole::ClaimSplit), &gw).unwrap();
    let verdicts = score_entailments(&claims.claims, &summaries, &m, &gw).unwrap();
    assert_eq!(verdicts.len(), claims.claims.len() * 5 * 2);

    let bundle = build_csms(&verdicts, &topic_presence(&claims.answers), &budgets).unwrap();
    assert_eq!(bundle.documents.len(), 6 * 2);
    assert_eq!(bundle.per_replicate.len(), 2);
    let mean = bundle.mean_for("m").unwrap();
    for (topic, &support) in &mean.support {
        assert_eq!(mean.prevalence[topic], support as f64 / 6.0);
    }
    for d in &bundle.documents {
        for row in d.entries.values() {
            let cells: Vec<f64> = row.values().copied().collect();
            assert!(cells.windows(2).all(|w| w[0] <= w[1]), "{}: {cells:?}", d.doc_id);
        }
    }
    for r in 0..2 {
        let vs: Vec<_> = verdicts.iter().filter(|v| v.replicate == r).cloned().collect();
        assert_eq!(incremental_consistency(&vs, &budgets).unwrap().value, 1.0);
    }
}

/// Fails every summary request for one document until healed.
struct FlakyTransport {
    broken_doc: Option<String>,
}

impl Transport for FlakyTransport {
    fn chat(&self, p: &BackendProfile, r: &PromptRequest) -> Result<String, TransportError> {
        if let (Some(doc), Some(text)) = (&self.broken_doc, r.var("document")) {
            if text.contains(doc.as_str()) {
                return Err(TransportError {
                    message: "simulated outage".into(),
                    retryable: false,
                });
            }
        }
        MockTransport.chat(p, r)
    }
    fn embed(&self, p: &BackendProfile, texts: &[String]) -> Result<Vec<Vec<f64>>, TransportError> {
        MockTransport.embed(p, texts)
    }
    fn entail(&self, p: &BackendProfile, c: &str, s: &str) -> Result<String, TransportError> {
        MockTransport.entail(p, c, s)
    }
}

#[test]
fn interrupted_probe_resumes_from_cache() {
    let dir = tempfile::tempdir().unwrap();
    let mut corpus = planted_corpus(&PlantedCorpusSpec {
        documents: 4,
        ..PlantedCorpusSpec::default()
    });
    corpus[2].text.push_str("\nmarker-zz");
    let budgets = BudgetSet::from_words(&[10, 50]).unwrap();
    let profile = BackendProfile {
        kind: BackendKind::Chat,
        endpoint: Some("http://127.0.0.1:9".into()),
        model_name: "flaky".into(),
        ..BackendProfile::mock("flaky")
    };
    let template = t(PromptRole::Summarize);

    let broken = Gateway::new(Some(ResponseCache::open(dir.path()).unwrap())).with_transport(Box::new(FlakyTransport {
        broken_doc: Some("marker-zz".into()),
    }));
    let err = generate_summaries(&corpus, &budgets, 2, &profile, &template, &broken).unwrap_err();
    assert!(err.is_backend(), "{err}");
    assert!(matches!(err, Error::Backend { .. }));

    let healed = Gateway::new(Some(ResponseCache::open(dir.path()).unwrap()))
        .with_transport(Box::new(FlakyTransport { broken_doc: None }));
    let out = generate_summaries(&corpus, &budgets, 2, &profile, &template, &healed).unwrap();
    assert_eq!(out.len(), 4 * 2 * 2);
    assert_eq!(healed.transport_calls(), 2 * 2, "only the failed document's cells are requested");

    let again = Gateway::new(Some(ResponseCache::open(dir.path()).unwrap()))
        .with_transport(Box::new(FlakyTransport { broken_doc: None }));
    assert_eq!(generate_summaries(&corpus, &budgets, 2, &profile, &template, &again).unwrap(), out);
    assert_eq!(again.transport_calls(), 0);
}

#[test]
fn temperature_is_part_of_the_cache_key() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = planted_corpus(&PlantedCorpusSpec {
        documents: 2,
        ..PlantedCorpusSpec::default()
    });
    let budgets = BudgetSet::from_words(&[20]).unwrap();
    let gw = Gateway::new(Some(ResponseCache::open(dir.path()).unwrap()))
        .with_transport(Box::new(FlakyTransport { broken_doc: None }));
    let mut p = BackendProfile {
        kind: BackendKind::Chat,
        endpoint: Some("http://127.0.0.1:9".into()),
        ..BackendProfile::mock("c")
    };
    generate_summaries(&corpus, &budgets, 1, &p, &t(PromptRole::Summarize), &gw).unwrap();
    assert_eq!(gw.transport_calls(), 2);
    p.temperature = 1.0;
    generate_summaries(&corpus, &budgets, 1, &p, &t(PromptRole::Summarize), &gw).unwrap();
    assert_eq!(gw.transport_calls(), 4);
}
