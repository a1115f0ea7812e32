use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::Deserialize;

use crate::domain::{RaterKind, SalienceRating, TopicCluster};
use crate::error::{Error, Result};
use crate::gateway::{BackendProfile, Gateway};
use crate::prompts::PromptTemplate;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ElicitOutcome {
    pub ratings: Vec<SalienceRating>,
    pub discarded_runs: Vec<u32>,
    /// Items missing from a response or rated outside 1..=5, over kept runs.
    pub omitted_items: usize,
}

fn rating_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\W*Q(\d+)\W*?[:.)\-]\s*(?:\*\*)?\s*(\d+)(?:\s*/\s*5)?\s*(?:\*\*)?\s*(?:\|\s*(.*?))?\s*$")
            .expect("valid regex")
    })
}

/// Ratings keyed by 1-based question number. Lines that do not match
/// `Q<k>: <rating> | <rationale>` or carry a rating outside 1..=5 are
/// skipped; the first line per question wins.
pub fn parse_ratings(response: &str) -> BTreeMap<usize, (u8, String)> {
    let mut out = BTreeMap::new();
    for line in response.lines() {
        let Some(c) = rating_line().captures(line) else {
            continue;
        };
        let (Ok(k), Ok(r)) = (c[1].parse::<usize>(), c[2].parse::<i64>()) else {
            continue;
        };
        if !SalienceRating::in_range(r) {
            continue;
        }
        let why = c.get(3).map_or("", |m| m.as_str()).to_string();
        out.entry(k).or_insert((r as u8, why));
    }
    out
}

/// Ask `profile` to rate every topic's representative question, `runs`
/// times, each over a list shuffled with seed `base_seed + run`.
pub fn elicit_perceived_salience(
    topics: &[TopicCluster],
    profile: &BackendProfile,
    template: &PromptTemplate,
    gateway: &Gateway,
    runs: u32,
    base_seed: u64,
) -> Result<ElicitOutcome> {
    if topics.is_empty() {
        return Err(Error::EmptyTopics("nothing to rate".into()));
    }
    if runs == 0 {
        return Err(Error::Config("introspection needs at least one run".into()));
    }
    let mut sorted: Vec<&TopicCluster> = topics.iter().collect();
    sorted.sort_by(|a, b| a.topic_id.cmp(&b.topic_id));

    let mut out = ElicitOutcome::default();
    for run in 0..runs {
        let mut order = sorted.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(run as u64)));
        let list = order
            .iter()
            .enumerate()
            .map(|(i, t)| format!("Q{}: {}", i + 1, t.representative_text))
            .collect::<Vec<_>>()
            .join("\n");
        let request = template.render(&[("questions_list", list)])?;
        let response = gateway.complete_chat(profile, &request, &format!("introspect-r{run}"))?;
        let parsed = parse_ratings(&response);
        let valid: Vec<(&TopicCluster, &(u8, String))> = order
            .iter()
            .enumerate()
            .filter_map(|(i, t)| parsed.get(&(i + 1)).map(|r| (*t, r)))
            .collect();
        if 2 * valid.len() < order.len() {
            log::warn!(
                "{} run {run}: only {} of {} ratings parseable, run discarded",
                profile.backend_id,
                valid.len(),
                order.len()
            );
            out.discarded_runs.push(run);
            continue;
        }
        out.omitted_items += order.len() - valid.len();
        let mut rows: Vec<SalienceRating> = valid
            .into_iter()
            .map(|(t, (rating, why))| SalienceRating {
                rater_id: profile.backend_id.clone(),
                rater_kind: RaterKind::Llm,
                topic_id: t.topic_id.clone(),
                rating: *rating,
                rationale: why.clone(),
                run_index: run,
            })
            .collect();
        rows.sort_by(|a, b| a.topic_id.cmp(&b.topic_id));
        out.ratings.extend(rows);
    }
    if out.discarded_runs.len() == runs as usize {
        return Err(Error::Backend {
            key: profile.backend_id.clone(),
            message: format!("all {runs} introspection runs were discarded as unparseable"),
        });
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct HumanRow {
    rater_id: String,
    topic_id: String,
    rating: String,
    #[serde(default)]
    rationale: String,
}

/// Read human ratings (`rater_id,topic_id,rating,rationale`). Every bad row
/// is reported with its line number.
pub fn ingest_human_ratings<R: Read>(reader: R, topics: &BTreeSet<String>) -> Result<Vec<SalienceRating>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    for need in ["rater_id", "topic_id", "rating"] {
        if !headers.iter().any(|h| h == need) {
            return Err(Error::InvalidInput(format!("ratings file lacks column {need}")));
        }
    }
    let mut problems = Vec::new();
    let mut seen: BTreeMap<(String, String), u64> = BTreeMap::new();
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let row: HumanRow = match record.deserialize(Some(&headers)) {
            Ok(r) => r,
            Err(e) => {
                problems.push(format!("line {line}: {e}"));
                continue;
            }
        };
        if row.rater_id.is_empty() {
            problems.push(format!("line {line}: empty rater_id"));
            continue;
        }
        if !topics.contains(&row.topic_id) {
            problems.push(format!("line {line}: unknown topic {}", row.topic_id));
            continue;
        }
        let rating = match row.rating.parse::<i64>() {
            Ok(r) if SalienceRating::in_range(r) => r as u8,
            _ => {
                problems.push(format!("line {line}: rating {:?} is not an integer in 1..=5", row.rating));
                continue;
            }
        };
        if let Some(first) = seen.insert((row.rater_id.clone(), row.topic_id.clone()), line) {
            problems.push(format!(
                "line {line}: rater {} already rated {} on line {first}",
                row.rater_id, row.topic_id
            ));
            continue;
        }
        out.push(SalienceRating {
            rater_id: row.rater_id,
            rater_kind: RaterKind::Human,
            topic_id: row.topic_id,
            rating,
            rationale: row.rationale,
            run_index: 0,
        });
    }
    if !problems.is_empty() {
        return Err(Error::InvalidInput(format!("ratings file rejected:\n{}", problems.join("\n"))));
    }
    out.sort_by(|a, b| (&a.rater_id, &a.topic_id).cmp(&(&b.rater_id, &b.topic_id)));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::PromptRole;

    fn topics(n: u32) -> Vec<TopicCluster> {
        (1..=n)
            .map(|k| TopicCluster {
                topic_id: format!("T{k:02}"),
                member_ids: [format!("q{k}")].into(),
                representative_id: format!("q{k}"),
                representative_text: format!("What does the document report about C{k}?"),
                merged_from: BTreeSet::new(),
            })
            .collect()
    }

    #[test]
    fn rating_parsing() {
        let r = parse_ratings("Q1: 4 | clear\nQ2: 7 | too high\nQ3: importance 7\n**Q4**: 2\nQ1: 1 | later\nnoise");
        assert_eq!(r.len(), 2);
        assert_eq!(r[&1], (4, "clear".to_string()));
        assert_eq!(r[&4], (2, String::new()));
    }

    #[test]
    fn mock_rater_follows_priority() {
        let ts = topics(5);
        let out = elicit_perceived_salience(
            &ts,
            &BackendProfile::mock("m"),
            &PromptTemplate::default_for(PromptRole::Introspect),
            &Gateway::new(None),
            5,
            11,
        )
        .unwrap();
        assert_eq!(out.ratings.len(), 25);
        assert!(out.discarded_runs.is_empty());
        for r in &out.ratings {
            let k: u8 = r.topic_id[1..].parse().unwrap();
            assert_eq!(r.rating, 6 - k);
            assert_eq!(r.rater_kind, RaterKind::Llm);
        }
        assert_eq!(out.ratings.iter().map(|r| r.run_index).collect::<BTreeSet<_>>().len(), 5);
    }

    #[test]
    fn human_csv() {
        let ts: BTreeSet<String> = ["T01", "T02", "T03"].iter().map(|s| s.to_string()).collect();
        let mut csv = String::from("rater_id,topic_id,rating,rationale\n");
        for r in ["h1", "h2", "h3"] {
            for t in &ts {
                csv.push_str(&format!("{r},{t},3,fine\n"));
            }
        }
        assert_eq!(ingest_human_ratings(csv.as_bytes(), &ts).unwrap().len(), 9);

        let bad = "rater_id,topic_id,rating,rationale\nh1,T01,6,x\nh1,T02,3,x\nh1,T02,4,y\nh1,T09,2,z\n";
        let err = ingest_human_ratings(bad.as_bytes(), &ts).unwrap_err().to_string();
        assert!(err.contains("line 2: rating"), "{err}");
        assert!(err.contains("line 4: rater h1 already rated T02 on line 3"), "{err}");
        assert!(err.contains("line 5: unknown topic T09"), "{err}");
    }
}
