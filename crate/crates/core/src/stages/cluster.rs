use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use kodama::{linkage, Method};
use serde::{Deserialize, Serialize};

use crate::domain::{QuestionRecord, TopicCluster};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterParams {
    pub min_cluster_size: usize,
    /// Cosine distance at which the average-linkage tree is cut.
    pub link_threshold: f64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            min_cluster_size: 15,
            link_threshold: 0.35,
        }
    }
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

fn embedding(q: &QuestionRecord) -> Result<&[f64]> {
    q.embedding
        .as_deref()
        .ok_or_else(|| Error::Contract(format!("question {} has no embedding", q.question_id)))
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Average-linkage agglomerative clustering on cosine distance, cut at
/// `link_threshold`; clusters below `min_cluster_size` are dropped. Topics
/// are numbered `T01, T02, ...` by their smallest question id.
pub fn cluster_questions(questions: &[QuestionRecord], params: &ClusterParams) -> Result<Vec<TopicCluster>> {
    if params.min_cluster_size == 0 {
        return Err(Error::Config("min_cluster_size must be at least 1".into()));
    }
    if questions.len() < params.min_cluster_size {
        return Err(Error::EmptyTopics(format!(
            "{} questions cannot form a cluster of at least {}",
            questions.len(),
            params.min_cluster_size
        )));
    }
    let mut sorted: Vec<&QuestionRecord> = questions.iter().collect();
    sorted.sort_by(|a, b| a.question_id.cmp(&b.question_id));
    if let Some(w) = sorted.windows(2).find(|w| w[0].question_id == w[1].question_id) {
        return Err(Error::InvalidInput(format!("duplicate question id {}", w[0].question_id)));
    }
    let vectors: Vec<&[f64]> = sorted.iter().map(|q| embedding(q)).collect::<Result<_>>()?;
    let dim = vectors[0].len();
    if let Some(q) = sorted.iter().zip(&vectors).find(|(_, v)| v.len() != dim) {
        return Err(Error::Contract(format!(
            "question {} embedding has dimension {}, expected {dim}",
            q.0.question_id,
            q.1.len()
        )));
    }

    let n = sorted.len();
    let mut parent: Vec<usize> = (0..n).collect();
    if n > 1 {
        let mut condensed = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n - 1 {
            for j in i + 1..n {
                condensed.push((1.0 - cosine_similarity(vectors[i], vectors[j])).max(0.0));
            }
        }
        let dendrogram = linkage(&mut condensed, n, Method::Average);
        // Any original point of each dendrogram node.
        let mut witness: Vec<usize> = (0..n).collect();
        for step in dendrogram.steps() {
            let (a, b) = (witness[step.cluster1], witness[step.cluster2]);
            witness.push(a);
            if step.dissimilarity <= params.link_threshold {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }

    let mut groups: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
    for (i, q) in sorted.iter().enumerate() {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().insert(q.question_id.clone());
    }
    let mut kept: Vec<BTreeSet<String>> = groups
        .into_values()
        .filter(|g| g.len() >= params.min_cluster_size)
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyTopics(format!(
            "no cluster reaches {} questions at link threshold {}",
            params.min_cluster_size, params.link_threshold
        )));
    }
    kept.sort_by(|a, b| a.first().cmp(&b.first()));
    let width = kept.len().to_string().len().max(2);
    let clusters: Vec<TopicCluster> = kept
        .into_iter()
        .enumerate()
        .map(|(i, members)| TopicCluster {
            topic_id: format!("T{:0width$}", i + 1),
            member_ids: members,
            representative_id: String::new(),
            representative_text: String::new(),
            merged_from: BTreeSet::new(),
        })
        .collect();
    select_representatives(clusters, questions)
}

fn closest_to_centroid<'a>(
    members: &BTreeSet<String>,
    index: &BTreeMap<&str, &'a QuestionRecord>,
) -> Result<&'a QuestionRecord> {
    let qs: Vec<&QuestionRecord> = members
        .iter()
        .map(|id| {
            index
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::Contract(format!("cluster member {id} is not a known question")))
        })
        .collect::<Result<_>>()?;
    let first = qs.first().ok_or_else(|| Error::Contract("empty cluster".into()))?;
    let dim = embedding(first)?.len();
    let mut centroid = vec![0.0; dim];
    for q in &qs {
        for (c, x) in centroid.iter_mut().zip(embedding(q)?) {
            *c += x;
        }
    }
    centroid.iter_mut().for_each(|c| *c /= qs.len() as f64);
    let mut best = (*first, f64::NEG_INFINITY);
    // Members are in id order, so keeping the first maximum breaks ties by id.
    for q in qs {
        let sim = cosine_similarity(embedding(q)?, &centroid);
        if sim > best.1 {
            best = (q, sim);
        }
    }
    Ok(best.0)
}

/// Set each cluster's representative to the member closest (cosine) to the
/// mean embedding; ties go to the smallest question id.
pub fn select_representatives(
    clusters: Vec<TopicCluster>,
    questions: &[QuestionRecord],
) -> Result<Vec<TopicCluster>> {
    let index: BTreeMap<&str, &QuestionRecord> =
        questions.iter().map(|q| (q.question_id.as_str(), q)).collect();
    clusters
        .into_iter()
        .map(|mut c| {
            let rep = closest_to_centroid(&c.member_ids, &index)?;
            c.representative_id = rep.question_id.clone();
            c.representative_text = rep.text.clone();
            Ok(c)
        })
        .collect()
}

/// Reviewer decisions after clustering.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeOverride {
    #[serde(default)]
    pub merge_groups: Vec<Vec<String>>,
    /// Keyed by the group's topic ids joined with `+` (e.g. `T01+T04`) or by
    /// the resulting topic id (the smallest of the group).
    #[serde(default)]
    pub representative_choice: BTreeMap<String, String>,
}

impl MergeOverride {
    pub fn is_empty(&self) -> bool {
        self.merge_groups.is_empty() && self.representative_choice.is_empty()
    }
}

/// Union the listed topic groups. Topic ids already folded in by an earlier
/// application resolve to their merged cluster, so re-applying an override
/// is a no-op.
pub fn apply_merge_overrides(
    clusters: Vec<TopicCluster>,
    overrides: &MergeOverride,
    questions: &[QuestionRecord],
) -> Result<Vec<TopicCluster>> {
    let owner = |id: &str| {
        clusters
            .iter()
            .position(|c| c.topic_id == id || c.merged_from.contains(id))
    };
    let unknown: BTreeSet<&str> = overrides
        .merge_groups
        .iter()
        .flatten()
        .map(String::as_str)
        .filter(|id| owner(id).is_none())
        .collect();
    if !unknown.is_empty() {
        return Err(Error::Config(format!(
            "merge override names unknown topics: {}",
            unknown.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }

    let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
    let mut resolved: Vec<BTreeSet<usize>> = Vec::new();
    for (g, group) in overrides.merge_groups.iter().enumerate() {
        let idx: BTreeSet<usize> = group.iter().filter_map(|id| owner(id)).collect();
        for &i in &idx {
            if let Some(prev) = seen.insert(i, g) {
                return Err(Error::Config(format!(
                    "topic {} appears in merge groups {} and {}",
                    clusters[i].topic_id,
                    prev + 1,
                    g + 1
                )));
            }
        }
        resolved.push(idx);
    }

    let index: BTreeMap<&str, &QuestionRecord> =
        questions.iter().map(|q| (q.question_id.as_str(), q)).collect();
    let choice_for = |group: &[String], topic_id: &str| {
        let mut ids: Vec<&str> = group.iter().map(String::as_str).collect();
        ids.sort_unstable();
        ids.dedup();
        overrides
            .representative_choice
            .get(&ids.join("+"))
            .or_else(|| overrides.representative_choice.get(topic_id))
    };

    let mut out: Vec<TopicCluster> = Vec::new();
    let mut consumed = BTreeSet::new();
    for (group, idx) in overrides.merge_groups.iter().zip(&resolved) {
        consumed.extend(idx.iter().copied());
        let parts: Vec<&TopicCluster> = idx.iter().map(|&i| &clusters[i]).collect();
        let topic_id = parts.iter().map(|c| c.topic_id.clone()).min().expect("non-empty group");
        let mut merged = TopicCluster {
            topic_id: topic_id.clone(),
            member_ids: parts.iter().flat_map(|c| c.member_ids.iter().cloned()).collect(),
            representative_id: String::new(),
            representative_text: String::new(),
            merged_from: parts
                .iter()
                .flat_map(|c| c.merged_from.iter().cloned().chain([c.topic_id.clone()]))
                .filter(|id| *id != topic_id)
                .collect(),
        };
        match choice_for(group, &topic_id) {
            Some(q) => {
                if !merged.member_ids.contains(q) {
                    return Err(Error::Config(format!(
                        "representative {q} is not a member of merged topic {topic_id}"
                    )));
                }
                merged.representative_id = q.clone();
                merged.representative_text = index
                    .get(q.as_str())
                    .map(|r| r.text.clone())
                    .ok_or_else(|| Error::Config(format!("representative {q} is not a known question")))?;
            }
            None => {
                let rep = closest_to_centroid(&merged.member_ids, &index)?;
                merged.representative_id = rep.question_id.clone();
                merged.representative_text = rep.text.clone();
            }
        }
        out.push(merged);
    }
    out.extend(
        clusters
            .iter()
            .enumerate()
            .filter(|(i, _)| !consumed.contains(i))
            .map(|(_, c)| c.clone()),
    );
    out.sort_by(|a, b| a.topic_id.cmp(&b.topic_id));
    Ok(out)
}

/// Text listing every cluster with its members, plus pairs of clusters whose
/// centroids are close enough to be merge candidates.
pub fn review_report(clusters: &[TopicCluster], questions: &[QuestionRecord]) -> Result<String> {
    const CANDIDATE_SIMILARITY: f64 = 0.9;
    let index: BTreeMap<&str, &QuestionRecord> =
        questions.iter().map(|q| (q.question_id.as_str(), q)).collect();
    let mut out = String::new();
    let mut centroids = Vec::new();
    for c in clusters {
        let _ = writeln!(out, "{}  ({} questions)", c.topic_id, c.member_ids.len());
        let _ = writeln!(out, "  representative: [{}] {}", c.representative_id, c.representative_text);
        let mut centroid: Vec<f64> = Vec::new();
        for id in &c.member_ids {
            let q = index
                .get(id.as_str())
                .ok_or_else(|| Error::Contract(format!("cluster member {id} is not a known question")))?;
            let _ = writeln!(out, "    [{id}] {}", q.text);
            if let Some(e) = &q.embedding {
                if centroid.is_empty() {
                    centroid = vec![0.0; e.len()];
                }
                centroid.iter_mut().zip(e).for_each(|(c, x)| *c += x);
            }
        }
        centroids.push(centroid);
        out.push('\n');
    }
    let mut candidates = Vec::new();
    for i in 0..clusters.len() {
        for j in i + 1..clusters.len() {
            let s = cosine_similarity(&centroids[i], &centroids[j]);
            if s > CANDIDATE_SIMILARITY {
                candidates.push(format!("  {} + {}  (centroid cosine {s:.3})", clusters[i].topic_id, clusters[j].topic_id));
            }
        }
    }
    out.push_str("Merge candidates:\n");
    if candidates.is_empty() {
        out.push_str("  none\n");
    } else {
        out.push_str(&candidates.join("\n"));
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::mock::mock_embedding;

    fn q(id: &str, text: &str) -> QuestionRecord {
        QuestionRecord {
            question_id: id.into(),
            doc_id: "d".into(),
            text: text.into(),
            embedding: Some(mock_embedding(text)),
        }
    }

    fn planted(categories: u32, per: usize) -> Vec<QuestionRecord> {
        let forms = ["What is said about C{}?", "Which details describe C{}?", "What information concerns C{}?"];
        let mut out = Vec::new();
        for c in 1..=categories {
            for i in 0..per {
                let text = forms[i % 3].replace("{}", &c.to_string());
                out.push(q(&format!("c{c}-{i:02}"), &format!("{text} ({i})")));
            }
        }
        out
    }

    fn params(min: usize) -> ClusterParams {
        ClusterParams { min_cluster_size: min, ..Default::default() }
    }

    #[test]
    fn planted_categories_form_clusters() {
        let qs = planted(3, 20);
        let clusters = cluster_questions(&qs, &params(15)).unwrap();
        assert_eq!(clusters.len(), 3);
        for (i, c) in clusters.iter().enumerate() {
            assert_eq!(c.topic_id, format!("T0{}", i + 1));
            assert_eq!(c.member_ids.len(), 20);
            assert!(c.member_ids.iter().all(|m| m.starts_with(&format!("c{}-", i + 1))));
            assert!(c.member_ids.contains(&c.representative_id));
        }
    }

    #[test]
    fn identical_questions_form_one_cluster() {
        let qs: Vec<_> = (0..16).map(|i| q(&format!("q{i:02}"), "What happened?")).collect();
        let clusters = cluster_questions(&qs, &params(15)).unwrap();
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].member_ids.len(), 16);
        assert_eq!(clusters[0].representative_id, "q00");
    }

    #[test]
    fn too_few_questions() {
        let qs = planted(1, 10);
        assert!(matches!(cluster_questions(&qs, &params(15)), Err(Error::EmptyTopics(_))));
    }

    #[test]
    fn permutation_invariant() {
        let qs = planted(3, 16);
        let base = cluster_questions(&qs, &params(15)).unwrap();
        let mut rev = qs.clone();
        rev.reverse();
        assert_eq!(cluster_questions(&rev, &params(15)).unwrap(), base);
    }

    #[test]
    fn representative_rules() {
        let single = TopicCluster {
            topic_id: "T01".into(),
            member_ids: ["a".to_string()].into(),
            representative_id: String::new(),
            representative_text: String::new(),
            merged_from: BTreeSet::new(),
        };
        let qs = vec![
            QuestionRecord { question_id: "a".into(), doc_id: "d".into(), text: "A".into(), embedding: Some(vec![1.0, 0.0]) },
            QuestionRecord { question_id: "b".into(), doc_id: "d".into(), text: "B".into(), embedding: Some(vec![0.0, 1.0]) },
        ];
        let out = select_representatives(vec![single.clone()], &qs).unwrap();
        assert_eq!(out[0].representative_id, "a");
        // Both members are equidistant from the centroid (1,1)/2.
        let pair = TopicCluster { member_ids: ["b".to_string(), "a".to_string()].into(), ..single };
        assert_eq!(select_representatives(vec![pair], &qs).unwrap()[0].representative_id, "a");
    }

    #[test]
    fn merge_overrides() {
        let qs = planted(3, 16);
        let clusters = cluster_questions(&qs, &params(15)).unwrap();
        assert_eq!(apply_merge_overrides(clusters.clone(), &MergeOverride::default(), &qs).unwrap(), clusters);

        let ov = MergeOverride {
            merge_groups: vec![vec!["T03".into(), "T01".into()]],
            representative_choice: [("T01+T03".to_string(), "c3-05".to_string())].into(),
        };
        let once = apply_merge_overrides(clusters.clone(), &ov, &qs).unwrap();
        assert_eq!(once.len(), 2);
        assert_eq!(once[0].topic_id, "T01");
        assert_eq!(once[0].member_ids.len(), 32);
        assert_eq!(once[0].representative_id, "c3-05");
        assert_eq!(once[1], clusters[1]);
        let twice = apply_merge_overrides(once.clone(), &ov, &qs).unwrap();
        assert_eq!(twice, once);

        let bad = MergeOverride { merge_groups: vec![vec!["T01".into(), "T09".into(), "T07".into()]], ..Default::default() };
        let err = apply_merge_overrides(clusters, &bad, &qs).unwrap_err().to_string();
        assert!(err.contains("T07, T09"), "{err}");
    }

    #[test]
    fn merge_without_choice_uses_centroid_rule() {
        let qs = planted(3, 16);
        let clusters = cluster_questions(&qs, &params(15)).unwrap();
        let ov = MergeOverride { merge_groups: vec![vec!["T01".into(), "T02".into(), "T03".into()]], ..Default::default() };
        let merged = apply_merge_overrides(clusters, &ov, &qs).unwrap();
        assert_eq!(merged.len(), 1);
        let mut centroid = vec![0.0; qs[0].embedding.as_ref().unwrap().len()];
        for q in &qs {
            centroid.iter_mut().zip(q.embedding.as_ref().unwrap()).for_each(|(c, x)| *c += x / qs.len() as f64);
        }
        let mut sorted = qs.clone();
        sorted.sort_by(|a, b| a.question_id.cmp(&b.question_id));
        let best = sorted
            .iter()
            .fold((None::<&QuestionRecord>, f64::NEG_INFINITY), |acc, q| {
                let s = cosine_similarity(q.embedding.as_ref().unwrap(), &centroid);
                if s > acc.1 { (Some(q), s) } else { acc }
            })
            .0
            .unwrap();
        assert_eq!(merged[0].representative_id, best.question_id);
    }

    #[test]
    fn report_lists_clusters() {
        let qs = planted(2, 16);
        let clusters = cluster_questions(&qs, &params(15)).unwrap();
        let text = review_report(&clusters, &qs).unwrap();
        assert!(text.contains("T01  (16 questions)"));
        assert!(text.contains("Merge candidates:\n  none"));
    }
}
