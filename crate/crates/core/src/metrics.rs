//! Measurement suite: length compliance, incremental consistency,
//! claim-level agreement, rank correlation and salience aggregation.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::domain::{AtomicClaim, BudgetSet, ClaimVerdict, DocumentCsm, LengthBudget, ReferenceAnswer};
use crate::error::{Error, Result};

/// Largest sample size for which Spearman p-values are computed by exact
/// enumeration of permutations.
pub const EXACT_PERMUTATION_MAX_N: usize = 8;

pub fn target_length_ratio(word_count: usize, budget: LengthBudget) -> f64 {
    word_count as f64 / budget.words() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClaimPattern {
    pub pattern: Vec<bool>,
    pub ever_entailed: bool,
    pub consistent: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncrementalConsistency {
    pub value: f64,
    pub entailed: usize,
    pub consistent: usize,
    /// No claim was ever entailed; `value` is 1.0 by convention.
    pub vacuous: bool,
    pub per_claim: BTreeMap<String, ClaimPattern>,
}

/// Fraction of ever-entailed claims whose entailment never drops as the
/// budget grows. Verdicts must come from a single (backend, replicate).
pub fn incremental_consistency(
    verdicts: &[ClaimVerdict],
    budgets: &BudgetSet,
) -> Result<IncrementalConsistency> {
    if let Some(first) = verdicts.first() {
        if let Some(v) = verdicts
            .iter()
            .find(|v| v.backend_id != first.backend_id || v.replicate != first.replicate)
        {
            return Err(Error::Contract(format!(
                "incremental consistency mixes ({}, {}) with ({}, {})",
                first.backend_id, first.replicate, v.backend_id, v.replicate
            )));
        }
    }

    let mut by_claim: BTreeMap<&str, BTreeMap<LengthBudget, bool>> = BTreeMap::new();
    for v in verdicts {
        if !budgets.contains(v.budget) {
            return Err(Error::Contract(format!(
                "claim {}: verdict at unconfigured budget {}",
                v.claim_id, v.budget
            )));
        }
        if by_claim
            .entry(&v.claim_id)
            .or_default()
            .insert(v.budget, v.entailed)
            .is_some()
        {
            return Err(Error::Contract(format!(
                "claim {}: duplicate verdict at budget {}",
                v.claim_id, v.budget
            )));
        }
    }

    let mut per_claim = BTreeMap::new();
    let (mut entailed, mut consistent) = (0usize, 0usize);
    for (claim, cells) in by_claim {
        let pattern = budgets
            .iter()
            .map(|b| {
                cells.get(&b).copied().ok_or_else(|| {
                    Error::IncompleteInput(format!("claim {claim}: no verdict at budget {b}"))
                })
            })
            .collect::<Result<Vec<bool>>>()?;
        let ever_entailed = pattern.iter().any(|&e| e);
        // Non-decreasing over adjacent budgets is equivalent to the
        // all-pairs condition for 0/1 sequences.
        let monotone = pattern.windows(2).all(|w| w[0] <= w[1]);
        let is_consistent = ever_entailed && monotone;
        entailed += ever_entailed as usize;
        consistent += is_consistent as usize;
        per_claim.insert(
            claim.to_string(),
            ClaimPattern {
                pattern,
                ever_entailed,
                consistent: is_consistent,
            },
        );
    }

    let vacuous = entailed == 0;
    if vacuous {
        debug!("incremental consistency: no entailed claims, reporting 1.0");
    }
    Ok(IncrementalConsistency {
        value: if vacuous { 1.0 } else { consistent as f64 / entailed as f64 },
        entailed,
        consistent,
        vacuous,
        per_claim,
    })
}

/// Global claim enumeration sorted by `(doc_id, topic_id, ordinal)`.
#[derive(Clone, Debug)]
pub struct ClaimUniverse {
    order: Vec<String>,
    index: HashMap<String, usize>,
}

impl ClaimUniverse {
    pub fn new(claims: &[AtomicClaim]) -> Result<Self> {
        let mut keyed: Vec<(&str, &str, u32, &str)> = claims
            .iter()
            .map(|c| (c.doc_id.as_str(), c.topic_id.as_str(), c.ordinal, c.claim_id.as_str()))
            .collect();
        keyed.sort();
        let order: Vec<String> = keyed.iter().map(|k| k.3.to_string()).collect();
        let mut index = HashMap::with_capacity(order.len());
        for (i, id) in order.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Contract(format!("duplicate claim id {id}")));
            }
        }
        Ok(Self { order, index })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.order
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimInclusionVector {
    pub backend_id: String,
    pub budget: LengthBudget,
    pub replicate: u32,
    pub item_order: Vec<String>,
    pub bits: Vec<bool>,
}

/// Which claims of the universe one backend's summaries entail at `budget`.
///
/// Claims without a verdict for this cell are left out of `item_order`;
/// [`align_pair`] drops them pairwise when two vectors are compared.
pub fn claim_inclusion_vector(
    universe: &ClaimUniverse,
    verdicts: &[ClaimVerdict],
    backend_id: &str,
    budget: LengthBudget,
    replicate: u32,
) -> Result<ClaimInclusionVector> {
    let mut slots: Vec<Option<bool>> = vec![None; universe.len()];
    for v in verdicts
        .iter()
        .filter(|v| v.backend_id == backend_id && v.budget == budget && v.replicate == replicate)
    {
        let i = *universe.index.get(&v.claim_id).ok_or_else(|| {
            Error::Alignment(format!("verdict for claim {} outside the claim universe", v.claim_id))
        })?;
        if slots[i].replace(v.entailed).is_some() {
            return Err(Error::Contract(format!(
                "duplicate verdict for claim {} ({backend_id}, {budget}, {replicate})",
                v.claim_id
            )));
        }
    }
    let mut item_order = Vec::with_capacity(universe.len());
    let mut bits = Vec::with_capacity(universe.len());
    for (id, slot) in universe.order.iter().zip(slots) {
        if let Some(bit) = slot {
            item_order.push(id.clone());
            bits.push(bit);
        }
    }
    let unscored = universe.len() - bits.len();
    if unscored > 0 {
        debug!("{backend_id}/{budget}/r{replicate}: {unscored} claims without verdicts");
    }
    Ok(ClaimInclusionVector {
        backend_id: backend_id.to_string(),
        budget,
        replicate,
        item_order,
        bits,
    })
}

/// Paired bit sequences over the items both vectors scored.
pub fn align_pair(
    a: &ClaimInclusionVector,
    b: &ClaimInclusionVector,
) -> Result<(Vec<bool>, Vec<bool>)> {
    if a.budget != b.budget {
        return Err(Error::Alignment(format!(
            "comparing vectors at budgets {} and {}",
            a.budget, b.budget
        )));
    }
    if a.item_order == b.item_order {
        return Ok((a.bits.clone(), b.bits.clone()));
    }
    let lookup: HashMap<&str, bool> = b
        .item_order
        .iter()
        .map(String::as_str)
        .zip(b.bits.iter().copied())
        .collect();
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (id, &bit) in a.item_order.iter().zip(&a.bits) {
        if let Some(&other) = lookup.get(id.as_str()) {
            x.push(bit);
            y.push(other);
        }
    }
    let dropped = a.bits.len() + b.bits.len() - 2 * x.len();
    if x.is_empty() {
        return Err(Error::Alignment(format!(
            "{} and {} share no scored claims at budget {}",
            a.backend_id, b.backend_id, a.budget
        )));
    }
    warn!(
        "{} vs {} at budget {}: {dropped} claims dropped pairwise",
        a.backend_id, b.backend_id, a.budget
    );
    Ok((x, y))
}

/// Krippendorff's alpha for two raters on nominal binary data, computed
/// from the coincidence matrix.
///
/// When every value is identical the expected disagreement vanishes; the
/// two vectors are then equal and 1.0 is returned.
pub fn krippendorff_alpha(v1: &[bool], v2: &[bool]) -> Result<f64> {
    if v1.len() != v2.len() {
        return Err(Error::InvalidInput(format!(
            "alpha needs equal-length vectors, got {} and {}",
            v1.len(),
            v2.len()
        )));
    }
    if v1.len() < 2 {
        return Err(Error::InvalidInput("alpha needs at least two items".into()));
    }
    // Each unit holds two pairable values and contributes 1/(m_u - 1) = 1
    // to both ordered cells of its value pair.
    let mut coincidence = [[0u64; 2]; 2];
    for (&a, &b) in v1.iter().zip(v2) {
        coincidence[a as usize][b as usize] += 1;
        coincidence[b as usize][a as usize] += 1;
    }
    let n_c = [
        coincidence[0][0] + coincidence[0][1],
        coincidence[1][0] + coincidence[1][1],
    ];
    let n = (n_c[0] + n_c[1]) as f64;
    let observed = (coincidence[0][1] + coincidence[1][0]) as f64 / n;
    let expected = (2 * n_c[0] * n_c[1]) as f64 / (n * (n - 1.0));
    if expected == 0.0 {
        debug!("alpha: both raters constant and equal, returning 1.0");
        return Ok(1.0);
    }
    Ok(1.0 - observed / expected)
}

/// Mean pairwise alpha over all unordered replicate pairs.
pub fn self_agreement<V: AsRef<[bool]>>(vectors: &[V]) -> Result<f64> {
    if vectors.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "self-agreement needs at least two replicates, got {}",
            vectors.len()
        )));
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..vectors.len() {
        for j in i + 1..vectors.len() {
            sum += krippendorff_alpha(vectors[i].as_ref(), vectors[j].as_ref())?;
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

/// 1-based ranks with ties replaced by their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && values[idx[j]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "rank correlation needs equal lengths, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "rank correlation needs at least 3 observations, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("rank correlation input contains NaN".into()));
    }
    Ok(())
}

/// Spearman's rho as the Pearson correlation of mid-ranks. `None` when
/// either rank vector is constant.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    check_pair(x, y)?;
    Ok(pearson(&average_ranks(x), &average_ranks(y)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    ExactPermutation,
    TApproximation,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpearmanTest {
    pub rho: f64,
    /// Two-sided.
    pub p_value: f64,
    pub n: usize,
    pub method: PValueMethod,
}

/// Spearman's rho with a two-sided p-value: exact over all permutations
/// for `n <= 8`, Student-t approximation otherwise.
pub fn spearman_test(x: &[f64], y: &[f64]) -> Result<Option<SpearmanTest>> {
    check_pair(x, y)?;
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let Some(rho) = pearson(&rx, &ry) else {
        return Ok(None);
    };
    let n = x.len();
    let (p_value, method) = if n <= EXACT_PERMUTATION_MAX_N {
        (exact_permutation_p(&rx, &ry, rho), PValueMethod::ExactPermutation)
    } else {
        (t_approximation_p(rho, n), PValueMethod::TApproximation)
    };
    Ok(Some(SpearmanTest {
        rho,
        p_value,
        n,
        method,
    }))
}

fn exact_permutation_p(rx: &[f64], ry: &[f64], observed: f64) -> f64 {
    const EPS: f64 = 1e-12;
    let mut perm = ry.to_vec();
    let n = perm.len();
    let (mut hits, mut total) = (0u64, 0u64);
    let mut visit = |p: &[f64]| {
        total += 1;
        if pearson(rx, p).is_some_and(|r| r.abs() >= observed.abs() - EPS) {
            hits += 1;
        }
    };
    // Heap's algorithm, iterative form.
    let mut c = vec![0usize; n];
    visit(&perm);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            visit(&perm);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    hits as f64 / total as f64
}

fn t_approximation_p(rho: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let denom = 1.0 - rho * rho;
    let p = if denom <= 0.0 {
        0.0
    } else {
        let t = rho * (df / denom).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        2.0 * (1.0 - dist.cdf(t.abs()))
    };
    // Keep p inside (0, 1] so it can enter the harmonic mean.
    p.clamp(f64::MIN_POSITIVE, 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairCorrelation {
    pub left: usize,
    pub right: usize,
    pub test: Option<SpearmanTest>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairwiseRho {
    pub mean: f64,
    pub std: f64,
    pub defined: usize,
    pub undefined: usize,
    pub pairs: Vec<PairCorrelation>,
    /// Harmonic mean of the defined pairs' p-values.
    pub hmp: f64,
}

fn summarize_pairs(pairs: Vec<PairCorrelation>) -> Result<PairwiseRho> {
    let defined: Vec<&SpearmanTest> = pairs.iter().filter_map(|p| p.test.as_ref()).collect();
    if defined.is_empty() {
        return Err(Error::Undefined(format!(
            "all {} rater pairs have constant ratings",
            pairs.len()
        )));
    }
    let k = defined.len() as f64;
    let mean = defined.iter().map(|t| t.rho).sum::<f64>() / k;
    let std = (defined.iter().map(|t| (t.rho - mean).powi(2)).sum::<f64>() / k).sqrt();
    let hmp = harmonic_mean_pvalue(&defined.iter().map(|t| t.p_value).collect::<Vec<_>>())?;
    let undefined = pairs.len() - defined.len();
    if undefined > 0 {
        debug!("{undefined} of {} pairs undefined (constant ratings)", pairs.len());
    }
    Ok(PairwiseRho {
        mean,
        std,
        defined: defined.len(),
        undefined,
        pairs,
        hmp,
    })
}

/// Mean Spearman correlation over all unordered pairs of rows
/// (raters × topics).
pub fn avg_pairwise_rho<R: AsRef<[f64]>>(rows: &[R]) -> Result<PairwiseRho> {
    if rows.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "averaged pairwise correlation needs at least two raters, got {}",
            rows.len()
        )));
    }
    let mut pairs = Vec::new();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            pairs.push(PairCorrelation {
                left: i,
                right: j,
                test: spearman_test(rows[i].as_ref(), rows[j].as_ref())?,
            });
        }
    }
    summarize_pairs(pairs)
}

/// Mean Spearman correlation over all (left, right) row combinations.
pub fn avg_cross_rho<L: AsRef<[f64]>, R: AsRef<[f64]>>(left: &[L], right: &[R]) -> Result<PairwiseRho> {
    if left.is_empty() || right.is_empty() {
        return Err(Error::InvalidInput("cross correlation needs raters on both sides".into()));
    }
    let mut pairs = Vec::new();
    for (i, l) in left.iter().enumerate() {
        for (j, r) in right.iter().enumerate() {
            pairs.push(PairCorrelation {
                left: i,
                right: j,
                test: spearman_test(l.as_ref(), r.as_ref())?,
            });
        }
    }
    summarize_pairs(pairs)
}

/// Unweighted harmonic mean of p-values.
pub fn harmonic_mean_pvalue(pvalues: &[f64]) -> Result<f64> {
    let Some(&first) = pvalues.first() else {
        return Err(Error::InvalidInput("harmonic mean of zero p-values".into()));
    };
    if let Some(bad) = pvalues.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
        return Err(Error::InvalidInput(format!("p-value {bad} outside (0, 1]")));
    }
    if pvalues.iter().all(|&p| p == first) {
        return Ok(first);
    }
    let inv: f64 = pvalues.iter().map(|p| 1.0 / p).sum();
    Ok(pvalues.len() as f64 / inv)
}

/// `**` below 0.01, `*` below 0.05.
pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    Uniform,
    Reciprocal,
    LogDecay,
}

impl WeightScheme {
    pub const ALL: [WeightScheme; 3] = [Self::Uniform, Self::Reciprocal, Self::LogDecay];

    pub fn weight(self, budget: LengthBudget) -> f64 {
        let l = budget.words() as f64;
        match self {
            Self::Uniform => 1.0,
            Self::Reciprocal => 1.0 / l,
            Self::LogDecay => 1.0 / (1.0 + l).ln(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Uniform => "uniform",
            Self::Reciprocal => "reciprocal",
            Self::LogDecay => "log_decay",
        }
    }
}

impl std::str::FromStr for WeightScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "reciprocal" => Ok(Self::Reciprocal),
            "log_decay" | "log-decay" => Ok(Self::LogDecay),
            other => Err(Error::Config(format!("unknown weighting scheme {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregationWeights {
    pub scheme: WeightScheme,
    pub weights: BTreeMap<LengthBudget, f64>,
}

impl AggregationWeights {
    pub fn new(scheme: WeightScheme, budgets: &BudgetSet) -> Self {
        Self {
            scheme,
            weights: budgets.iter().map(|b| (b, scheme.weight(b))).collect(),
        }
    }
}

/// Weighted mean of one map row over the configured budgets.
pub fn aggregate_salience(row: &BTreeMap<LengthBudget, f64>, weights: &AggregationWeights) -> Result<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (budget, &w) in &weights.weights {
        let score = *row.get(budget).ok_or_else(|| {
            Error::IncompleteInput(format!("salience row has no score at budget {budget}"))
        })?;
        num += w * score;
        den += w;
        lo = lo.min(score);
        hi = hi.max(score);
    }
    if den == 0.0 {
        return Err(Error::InvalidInput("no aggregation weights configured".into()));
    }
    Ok((num / den).clamp(lo, hi))
}

/// Linear map of `[0, 1]` onto the 1–5 Likert range.
pub fn rescale_to_likert(score: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&score) {
        return Err(Error::InvalidInput(format!("score {score} outside [0, 1]")));
    }
    Ok(1.0 + 4.0 * score)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthSalienceCorrelation {
    pub budget: LengthBudget,
    pub n: usize,
    /// `None` when either side is constant.
    pub test: Option<SpearmanTest>,
}

/// Rank correlation between reference-answer length and the document-level
/// score at `budget`, over all (document, topic) pairs with an answer.
pub fn answer_length_salience_correlation(
    answers: &[ReferenceAnswer],
    doc_csms: &[DocumentCsm],
    budget: LengthBudget,
) -> Result<LengthSalienceCorrelation> {
    let keys: BTreeSet<_> = doc_csms.iter().map(|d| (&d.backend_id, d.replicate)).collect();
    if keys.len() > 1 {
        return Err(Error::Contract(
            "answer-length correlation needs maps from a single backend and replicate".into(),
        ));
    }
    let by_doc: HashMap<&str, &DocumentCsm> = doc_csms.iter().map(|d| (d.doc_id.as_str(), d)).collect();
    let mut pairs: Vec<(&str, &str, f64, f64)> = answers
        .iter()
        .filter(|a| !a.is_absent())
        .filter_map(|a| {
            let score = by_doc.get(a.doc_id.as_str())?.get(&a.topic_id, budget)?;
            Some((a.doc_id.as_str(), a.topic_id.as_str(), a.word_count as f64, score))
        })
        .collect();
    pairs.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    if pairs.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "answer-length correlation needs at least 3 answered pairs, got {}",
            pairs.len()
        )));
    }
    let lengths: Vec<f64> = pairs.iter().map(|p| p.2).collect();
    let scores: Vec<f64> = pairs.iter().map(|p| p.3).collect();
    Ok(LengthSalienceCorrelation {
        budget,
        n: pairs.len(),
        test: spearman_test(&lengths, &scores)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(w: u32) -> LengthBudget {
        LengthBudget::new(w).unwrap()
    }

    fn verdict(claim: &str, budget: u32, entailed: bool) -> ClaimVerdict {
        ClaimVerdict {
            claim_id: claim.into(),
            doc_id: "d".into(),
            topic_id: "t".into(),
            budget: b(budget),
            replicate: 0,
            backend_id: "m".into(),
            entailed,
        }
    }

    #[test]
    fn tlr_examples() {
        assert_eq!(target_length_ratio(47, b(50)), 0.94);
        assert_eq!(target_length_ratio(50, b(50)), 1.0);
        assert_eq!(target_length_ratio(200, b(100)), 2.0);
    }

    #[test]
    fn ic_worked_example() {
        let budgets = BudgetSet::from_words(&[10, 20, 50]).unwrap();
        let mut vs = Vec::new();
        for (claim, pat) in [("a1", [0, 1, 1]), ("a2", [1, 0, 1]), ("a3", [0, 0, 0])] {
            for (w, e) in [10, 20, 50].into_iter().zip(pat) {
                vs.push(verdict(claim, w, e == 1));
            }
        }
        let ic = incremental_consistency(&vs, &budgets).unwrap();
        assert_eq!(ic.entailed, 2);
        assert_eq!(ic.consistent, 1);
        assert_eq!(ic.value, 0.5);
        assert!(ic.per_claim["a1"].consistent);
        assert!(!ic.per_claim["a2"].consistent);
        assert!(!ic.per_claim["a3"].ever_entailed);
    }

    #[test]
    fn ic_monotone_and_vacuous() {
        let budgets = BudgetSet::from_words(&[10, 20]).unwrap();
        let vs = vec![verdict("a", 10, false), verdict("a", 20, true), verdict("b", 10, true), verdict("b", 20, true)];
        assert_eq!(incremental_consistency(&vs, &budgets).unwrap().value, 1.0);
        let none = vec![verdict("a", 10, false), verdict("a", 20, false)];
        let ic = incremental_consistency(&none, &budgets).unwrap();
        assert!(ic.vacuous);
        assert_eq!(ic.value, 1.0);
    }

    #[test]
    fn ic_missing_budget_column() {
        let budgets = BudgetSet::from_words(&[10, 20]).unwrap();
        let vs = vec![verdict("a", 10, true)];
        assert!(matches!(
            incremental_consistency(&vs, &budgets),
            Err(Error::IncompleteInput(_))
        ));
    }

    fn claim(doc: &str, topic: &str, ordinal: u32) -> AtomicClaim {
        AtomicClaim {
            claim_id: AtomicClaim::make_id(doc, topic, ordinal),
            doc_id: doc.into(),
            topic_id: topic.into(),
            ordinal,
            text: "x".into(),
        }
    }

    #[test]
    fn inclusion_vector_is_sorted_and_order_free() {
        let claims = vec![claim("d2", "t1", 0), claim("d1", "t2", 0), claim("d1", "t1", 1), claim("d1", "t1", 0)];
        let u = ClaimUniverse::new(&claims).unwrap();
        let bits = [true, false, false, true];
        let mut vs: Vec<ClaimVerdict> = u
            .ids()
            .iter()
            .zip(bits)
            .map(|(id, e)| ClaimVerdict { claim_id: id.clone(), ..verdict("", 10, e) })
            .collect();
        let v = claim_inclusion_vector(&u, &vs, "m", b(10), 0).unwrap();
        assert_eq!(v.bits, bits);
        assert_eq!(v.item_order[0], "d1:t1:000");
        vs.reverse();
        assert_eq!(claim_inclusion_vector(&u, &vs, "m", b(10), 0).unwrap(), v);
        let mut other = vs.clone();
        for x in &mut other {
            x.backend_id = "n".into();
        }
        let w = claim_inclusion_vector(&u, &other, "n", b(10), 0).unwrap();
        assert_eq!(w.item_order, v.item_order);
    }

    #[test]
    fn inclusion_vector_rejects_foreign_claims() {
        let u = ClaimUniverse::new(&[claim("d", "t", 0)]).unwrap();
        let vs = vec![verdict("zzz", 10, true)];
        assert!(matches!(
            claim_inclusion_vector(&u, &vs, "m", b(10), 0),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn align_pair_drops_unshared_items() {
        let mk = |ids: &[&str], bits: &[bool]| ClaimInclusionVector {
            backend_id: "m".into(),
            budget: b(10),
            replicate: 0,
            item_order: ids.iter().map(|s| s.to_string()).collect(),
            bits: bits.to_vec(),
        };
        let a = mk(&["a", "b", "c"], &[true, false, true]);
        let c = mk(&["a", "c"], &[false, true]);
        let (x, y) = align_pair(&a, &c).unwrap();
        assert_eq!(x, vec![true, true]);
        assert_eq!(y, vec![false, true]);
        assert!(align_pair(&a, &mk(&["q"], &[true])).is_err());
    }

    #[test]
    fn alpha_examples() {
        let v = [true, false, true, true, false];
        assert_eq!(krippendorff_alpha(&v, &v).unwrap(), 1.0);
        let a = krippendorff_alpha(&[true, true, false, false], &[true, false, false, true]).unwrap();
        assert!((a - 0.125).abs() < 1e-12);
        assert_eq!(krippendorff_alpha(&[true, true], &[true, true]).unwrap(), 1.0);
        assert!(krippendorff_alpha(&[true], &[true]).is_err());
        assert!(krippendorff_alpha(&[true, false], &[true]).is_err());
    }

    #[test]
    fn self_agreement_cases() {
        let v = vec![vec![true, false, true], vec![true, false, true], vec![true, false, true]];
        assert_eq!(self_agreement(&v).unwrap(), 1.0);
        let pair = vec![vec![true, true, false, false], vec![true, false, false, true]];
        assert_eq!(
            self_agreement(&pair).unwrap(),
            krippendorff_alpha(&pair[0], &pair[1]).unwrap()
        );
        assert!(self_agreement(&pair[..1]).is_err());
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman_rho(&[1., 2., 3.], &[10., 20., 30.]).unwrap(), Some(1.0));
        assert_eq!(spearman_rho(&[1., 2., 3.], &[3., 2., 1.]).unwrap(), Some(-1.0));
        assert_eq!(spearman_rho(&[1., 1., 1.], &[3., 2., 1.]).unwrap(), None);
        assert!(spearman_rho(&[1., 2.], &[1., 2.]).is_err());
        assert!(spearman_rho(&[1., 2., 3.], &[1., 2.]).is_err());
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[1., 2., 2., 4.]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(average_ranks(&[3., 3., 3.]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn exact_p_for_perfect_ranking_of_five() {
        let t = spearman_test(&[1., 2., 3., 4., 5.], &[2., 4., 6., 8., 10.]).unwrap().unwrap();
        assert_eq!(t.method, PValueMethod::ExactPermutation);
        // Only the identity and the reversal reach |rho| = 1 among 120 orders.
        assert!((t.p_value - 2.0 / 120.0).abs() < 1e-15);
    }

    #[test]
    fn t_approximation_for_larger_samples() {
        let x: Vec<f64> = (0..12).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| (v * 7.0) % 12.0).collect();
        let t = spearman_test(&x, &y).unwrap().unwrap();
        assert_eq!(t.method, PValueMethod::TApproximation);
        assert!(t.p_value > 0.0 && t.p_value <= 1.0);
        let perfect = spearman_test(&x, &x).unwrap().unwrap();
        assert!(perfect.p_value > 0.0);
    }

    #[test]
    fn pairwise_rho_examples() {
        let rows = vec![vec![1., 2., 3., 4.], vec![1., 2., 3., 4.]];
        assert_eq!(avg_pairwise_rho(&rows).unwrap().mean, 1.0);
        let constant = vec![vec![1., 1., 1.], vec![2., 2., 2.]];
        assert!(matches!(avg_pairwise_rho(&constant), Err(Error::Undefined(_))));
        let mixed = vec![vec![1., 1., 1.], vec![1., 2., 3.], vec![1., 2., 3.]];
        let r = avg_pairwise_rho(&mixed).unwrap();
        assert_eq!((r.defined, r.undefined, r.mean), (1, 2, 1.0));
    }

    #[test]
    fn hmp_examples() {
        assert_eq!(harmonic_mean_pvalue(&[0.05, 0.05]).unwrap(), 0.05);
        assert!((harmonic_mean_pvalue(&[0.02, 0.06]).unwrap() - 0.03).abs() < 1e-12);
        assert!(harmonic_mean_pvalue(&[0.0, 0.5]).is_err());
        assert!(harmonic_mean_pvalue(&[]).is_err());
        assert_eq!(significance_stars(0.03), "*");
        assert_eq!(significance_stars(0.001), "**");
        assert_eq!(significance_stars(0.2), "");
    }

    #[test]
    fn aggregation_examples() {
        let budgets = BudgetSet::default();
        let row = |vals: [f64; 5]| -> BTreeMap<LengthBudget, f64> { budgets.iter().zip(vals).collect() };
        let uni = AggregationWeights::new(WeightScheme::Uniform, &budgets);
        assert!((aggregate_salience(&row([0.2, 0.4, 0.6, 0.8, 1.0]), &uni).unwrap() - 0.6).abs() < 1e-15);
        let rec = AggregationWeights::new(WeightScheme::Reciprocal, &budgets);
        let v = aggregate_salience(&row([0.8, 0.6, 0.4, 0.2, 0.1]), &rec).unwrap();
        assert!((v - 0.1205 / 0.185).abs() < 1e-12);
        for scheme in WeightScheme::ALL {
            let w = AggregationWeights::new(scheme, &budgets);
            assert_eq!(aggregate_salience(&row([0.37; 5]), &w).unwrap(), 0.37);
        }
        let mut partial = row([0.1; 5]);
        partial.remove(&b(50));
        assert!(aggregate_salience(&partial, &uni).is_err());
    }

    #[test]
    fn log_decay_uses_natural_log() {
        assert_eq!(WeightScheme::LogDecay.weight(b(10)), 1.0 / 11f64.ln());
    }

    #[test]
    fn likert_examples() {
        assert_eq!(rescale_to_likert(0.0).unwrap(), 1.0);
        assert_eq!(rescale_to_likert(0.5).unwrap(), 3.0);
        assert_eq!(rescale_to_likert(1.0).unwrap(), 5.0);
        assert!(rescale_to_likert(1.2).is_err());
        assert!(rescale_to_likert(-0.1).is_err());
    }

    fn csm(doc: &str, cells: &[(&str, f64)]) -> DocumentCsm {
        DocumentCsm {
            doc_id: doc.into(),
            backend_id: "m".into(),
            replicate: 0,
            entries: cells
                .iter()
                .map(|&(t, v)| (t.to_string(), BTreeMap::from([(b(200), v)])))
                .collect(),
            absent_topics: Default::default(),
        }
    }

    #[test]
    fn answer_length_negative_when_long_answers_are_less_salient() {
        let answers = vec![
            ReferenceAnswer::present("d1", "t1", "short"),
            ReferenceAnswer::present("d1", "t2", "a much longer answer with many words in it"),
            ReferenceAnswer::present("d2", "t1", "two words"),
            ReferenceAnswer::present("d2", "t2", "an answer of moderate length"),
            ReferenceAnswer::absent("d2", "t3"),
        ];
        let csms = vec![csm("d1", &[("t1", 1.0), ("t2", 0.2)]), csm("d2", &[("t1", 0.9), ("t2", 0.5)])];
        let r = answer_length_salience_correlation(&answers, &csms, b(200)).unwrap();
        assert_eq!(r.n, 4);
        assert!(r.test.unwrap().rho < 0.0);
    }

    #[test]
    fn answer_length_constant_and_insufficient() {
        let answers = vec![
            ReferenceAnswer::present("d1", "t1", "a b"),
            ReferenceAnswer::present("d1", "t2", "c d"),
            ReferenceAnswer::present("d1", "t3", "e f"),
        ];
        let csms = vec![csm("d1", &[("t1", 1.0), ("t2", 0.2), ("t3", 0.4)])];
        let r = answer_length_salience_correlation(&answers, &csms, b(200)).unwrap();
        assert!(r.test.is_none());
        assert!(answer_length_salience_correlation(&answers[..2], &csms, b(200)).is_err());
    }
}
