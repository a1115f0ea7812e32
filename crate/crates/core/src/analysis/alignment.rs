use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::{BudgetSet, CorpusCsm, LengthBudget, RaterKind, SalienceRating};
use crate::error::{Error, Result};
use crate::metrics::{aggregate_salience, avg_cross_rho, avg_pairwise_rho, significance_stars, AggregationWeights, PairwiseRho, WeightScheme};

/// Which column of a corpus map stands for observed salience.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObservedSource {
    Budget(LengthBudget),
    Aggregate(WeightScheme),
}

impl fmt::Display for ObservedSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Budget(b) => write!(f, "{}", b.words()),
            Self::Aggregate(s) => write!(f, "agg:{}", s.name()),
        }
    }
}

impl std::str::FromStr for ObservedSource {
    type Err = Error;

    /// `"200"` for a budget column, `"agg:<scheme>"` for an aggregate.
    fn from_str(s: &str) -> Result<Self> {
        if let Some(scheme) = s.strip_prefix("agg:") {
            return Ok(Self::Aggregate(scheme.parse()?));
        }
        let words: u32 = s
            .parse()
            .map_err(|_| Error::Config(format!("observed source {s:?} is neither a budget nor agg:<scheme>")))?;
        Ok(Self::Budget(LengthBudget::new(words)?))
    }
}

impl Serialize for ObservedSource {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ObservedSource {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Observed salience per topic; topics without map entries are left out.
pub fn observed_scores(csm: &CorpusCsm, source: ObservedSource, budgets: &BudgetSet) -> Result<BTreeMap<String, f64>> {
    match source {
        ObservedSource::Budget(b) => {
            if !budgets.contains(b) {
                return Err(Error::Config(format!("observed budget {b} is not configured")));
            }
            Ok(csm
                .entries
                .iter()
                .filter_map(|(t, row)| row.get(&b).map(|v| (t.clone(), *v)))
                .collect())
        }
        ObservedSource::Aggregate(scheme) => {
            let w = AggregationWeights::new(scheme, budgets);
            csm.entries
                .iter()
                .map(|(t, row)| Ok((t.clone(), aggregate_salience(row, &w)?)))
                .collect()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Measure {
    PerceivedConsistency,
    ObservedConsistency,
    PerceivedVsObserved,
    PerceivedVsHuman,
    ObservedVsHuman,
}

impl Measure {
    pub fn name(self) -> &'static str {
        match self {
            Self::PerceivedConsistency => "perceived-consistency",
            Self::ObservedConsistency => "observed-consistency",
            Self::PerceivedVsObserved => "perceived-vs-observed",
            Self::PerceivedVsHuman => "perceived-vs-human",
            Self::ObservedVsHuman => "observed-vs-human",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRow {
    pub measure: Measure,
    pub dataset: String,
    pub backend: String,
    /// Other side of a comparison (summarizer backend or `human`).
    pub against: String,
    /// Mean pairwise rho; `None` if every pair was undefined.
    pub rho: Option<f64>,
    /// Harmonic mean of the pairs' two-sided p-values.
    pub p_value: Option<f64>,
    /// Topics the correlation ran over.
    pub n: usize,
    pub pairs: usize,
    pub undefined_pairs: usize,
}

impl AlignmentRow {
    pub fn stars(&self) -> &'static str {
        self.p_value.map_or("", significance_stars)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub rows: Vec<AlignmentRow>,
}

/// One rater run or replicate: topic → score.
type Profile = BTreeMap<String, f64>;

fn common_topics<'a>(sides: impl IntoIterator<Item = &'a Profile>) -> Vec<String> {
    let mut iter = sides.into_iter();
    let Some(first) = iter.next() else {
        return Vec::new();
    };
    let mut common: BTreeSet<&String> = first.keys().collect();
    for p in iter {
        common.retain(|t| p.contains_key(*t));
    }
    common.into_iter().cloned().collect()
}

fn vectors(profiles: &[&Profile], topics: &[String]) -> Vec<Vec<f64>> {
    profiles
        .iter()
        .map(|p| topics.iter().map(|t| p[t]).collect())
        .collect()
}

fn row(measure: Measure, dataset: &str, backend: &str, against: &str, n: usize, result: Result<PairwiseRho>) -> Result<AlignmentRow> {
    let (rho, p, pairs, undefined) = match result {
        Ok(r) => (Some(r.mean), Some(r.hmp), r.pairs.len(), r.undefined),
        Err(Error::Undefined(msg)) => {
            log::warn!("{} {backend} vs {against}: {msg}", measure.name());
            (None, None, 0, 0)
        }
        Err(e) => return Err(e),
    };
    Ok(AlignmentRow {
        measure,
        dataset: dataset.to_string(),
        backend: backend.to_string(),
        against: against.to_string(),
        rho,
        p_value: p,
        n,
        pairs,
        undefined_pairs: undefined,
    })
}

fn within(measure: Measure, dataset: &str, backend: &str, group: &[&Profile]) -> Result<Option<AlignmentRow>> {
    if group.len() < 2 {
        return Ok(None);
    }
    let topics = common_topics(group.iter().copied());
    if topics.len() < 3 {
        log::warn!("{} {backend}: only {} shared topics", measure.name(), topics.len());
        return Ok(None);
    }
    let r = avg_pairwise_rho(&vectors(group, &topics));
    row(measure, dataset, backend, "", topics.len(), r).map(Some)
}

fn across(
    measure: Measure,
    dataset: &str,
    (backend, left): (&str, &[&Profile]),
    (against, right): (&str, &[&Profile]),
) -> Result<Option<AlignmentRow>> {
    if left.is_empty() || right.is_empty() {
        return Ok(None);
    }
    let topics = common_topics(left.iter().chain(right).copied());
    if topics.len() < 3 {
        log::warn!("{} {backend} vs {against}: only {} shared topics", measure.name(), topics.len());
        return Ok(None);
    }
    let r = avg_cross_rho(&vectors(left, &topics), &vectors(right, &topics));
    row(measure, dataset, backend, against, topics.len(), r).map(Some)
}

/// Group ratings into one topic → rating profile per (rater, run).
fn rating_profiles(ratings: &[SalienceRating], kind: RaterKind) -> BTreeMap<&str, BTreeMap<u32, Profile>> {
    let mut out: BTreeMap<&str, BTreeMap<u32, Profile>> = BTreeMap::new();
    for r in ratings.iter().filter(|r| r.rater_kind == kind) {
        out.entry(r.rater_id.as_str())
            .or_default()
            .entry(r.run_index)
            .or_default()
            .insert(r.topic_id.clone(), r.rating as f64);
    }
    out
}

pub struct AlignmentInputs<'a> {
    pub dataset: &'a str,
    pub topics: &'a BTreeSet<String>,
    /// LLM introspection ratings, one rater id per rating backend.
    pub perceived: &'a [SalienceRating],
    /// Per-replicate corpus maps of every summarizer.
    pub per_replicate: &'a [CorpusCsm],
    /// Mean-over-replicates corpus map of every summarizer.
    pub mean: &'a [CorpusCsm],
    pub human: &'a [SalienceRating],
    pub source: ObservedSource,
    pub budgets: &'a BudgetSet,
}

/// Rank correlations between perceived (LLM), observed (maps) and human
/// salience. Each comparison runs over the topics both sides scored; rows
/// needing an absent source are left out.
pub fn alignment_report(inputs: &AlignmentInputs<'_>) -> Result<AlignmentReport> {
    let ds = inputs.dataset;
    let foreign: BTreeSet<&str> = inputs
        .perceived
        .iter()
        .chain(inputs.human)
        .map(|r| r.topic_id.as_str())
        .chain(inputs.per_replicate.iter().chain(inputs.mean).flat_map(|c| c.entries.keys().map(String::as_str)))
        .filter(|t| !inputs.topics.contains(*t))
        .collect();
    if !foreign.is_empty() {
        return Err(Error::Alignment(format!(
            "salience scores for topics outside the topic set: {}",
            foreign.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }

    let perceived = rating_profiles(inputs.perceived, RaterKind::Llm);
    let human_by_rater = rating_profiles(inputs.human, RaterKind::Human);
    let human: Vec<&Profile> = human_by_rater.values().flat_map(|runs| runs.values()).collect();

    let mut replicates: BTreeMap<&str, Vec<(Option<u32>, Profile)>> = BTreeMap::new();
    for c in inputs.per_replicate {
        replicates
            .entry(c.backend_id.as_str())
            .or_default()
            .push((c.replicate, observed_scores(c, inputs.source, inputs.budgets)?));
    }
    for reps in replicates.values_mut() {
        reps.sort_by_key(|r| r.0);
    }
    let mut observed: BTreeMap<&str, Profile> = BTreeMap::new();
    for c in inputs.mean {
        observed.insert(c.backend_id.as_str(), observed_scores(c, inputs.source, inputs.budgets)?);
    }

    let mut rows = Vec::new();
    for (rater, runs) in &perceived {
        let runs: Vec<&Profile> = runs.values().collect();
        rows.extend(within(Measure::PerceivedConsistency, ds, rater, &runs)?);
    }
    for (backend, reps) in &replicates {
        let reps: Vec<&Profile> = reps.iter().map(|r| &r.1).collect();
        rows.extend(within(Measure::ObservedConsistency, ds, backend, &reps)?);
    }
    for (rater, runs) in &perceived {
        let runs: Vec<&Profile> = runs.values().collect();
        for (backend, obs) in &observed {
            rows.extend(across(Measure::PerceivedVsObserved, ds, (rater, &runs), (backend, &[obs]))?);
        }
        rows.extend(across(Measure::PerceivedVsHuman, ds, (rater, &runs), ("human", &human))?);
    }
    for (backend, obs) in &observed {
        rows.extend(across(Measure::ObservedVsHuman, ds, (backend, &[obs]), ("human", &human))?);
    }
    Ok(AlignmentReport { rows })
}
