use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::agreement::AgreementMatrix;
use crate::domain::{BudgetSet, ClaimVerdict, ReferenceAnswer, SummaryRecord};
use crate::error::Result;
use crate::metrics::{answer_length_salience_correlation, incremental_consistency, target_length_ratio};
use crate::stages::CsmBundle;

/// One line of the metrics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub backend: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicate: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair: Option<String>,
    pub value: Option<f64>,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    #[serde(default)]
    pub flags: String,
}

impl MetricRow {
    fn new(metric: &str, backend: &str, value: Option<f64>, n: usize) -> Self {
        Self {
            metric: metric.to_string(),
            backend: backend.to_string(),
            budget: None,
            replicate: None,
            pair: None,
            value,
            n,
            p_value: None,
            flags: String::new(),
        }
    }
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    Some(if values.len().is_multiple_of(2) { (values[m - 1] + values[m]) / 2.0 } else { values[m] })
}

fn group_verdicts(verdicts: &[ClaimVerdict]) -> BTreeMap<(&str, u32), Vec<ClaimVerdict>> {
    let mut out: BTreeMap<(&str, u32), Vec<ClaimVerdict>> = BTreeMap::new();
    for v in verdicts {
        out.entry((v.backend_id.as_str(), v.replicate)).or_default().push(v.clone());
    }
    out
}

/// Length compliance, incremental consistency, answerability, agreement and
/// answer-length correlation for every backend.
pub fn metric_rows(
    summaries: &[SummaryRecord],
    answers: &[ReferenceAnswer],
    verdicts: &[ClaimVerdict],
    bundle: &CsmBundle,
    matrices: &[AgreementMatrix],
    budgets: &BudgetSet,
) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::new();

    let mut tlr: BTreeMap<(&str, u32), Vec<f64>> = BTreeMap::new();
    for s in summaries {
        tlr.entry((s.backend_id.as_str(), s.budget.words()))
            .or_default()
            .push(target_length_ratio(s.word_count, s.budget));
    }
    let mut all_tlr: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for ((backend, budget), values) in &tlr {
        let mut r = MetricRow::new("tlr_mean", backend, Some(values.iter().sum::<f64>() / values.len() as f64), values.len());
        r.budget = Some(*budget);
        rows.push(r);
        all_tlr.entry(backend).or_default().extend(values);
    }
    for (backend, mut values) in all_tlr {
        rows.push(MetricRow::new("tlr_median", backend, median(&mut values), values.len()));
    }

    for ((backend, replicate), vs) in group_verdicts(verdicts) {
        let ic = incremental_consistency(&vs, budgets)?;
        let mut r = MetricRow::new("incremental_consistency", backend, Some(ic.value), ic.entailed);
        r.replicate = Some(replicate);
        if ic.vacuous {
            r.flags = "vacuous".into();
        }
        rows.push(r);
    }

    for csm in &bundle.mean {
        for (budget, value) in csm.average_row() {
            let mut r = MetricRow::new("avg_answerability", &csm.backend_id, Some(value), csm.entries.len());
            r.budget = Some(budget.words());
            rows.push(r);
        }
    }

    for m in matrices {
        for (i, backend) in m.backend_ids.iter().enumerate() {
            let mut r = MetricRow::new("self_agreement", backend, m.diagonal[i], 0);
            r.budget = Some(m.budget.words());
            if m.diagonal[i].is_none() {
                r.flags = "undefined".into();
            }
            rows.push(r);
            for j in i + 1..m.backend_ids.len() {
                let mut r = MetricRow::new("cross_alpha", backend, m.cells[i][j], 0);
                r.budget = Some(m.budget.words());
                r.pair = Some(format!("{backend}|{}", m.backend_ids[j]));
                if m.cells[i][j].is_none() {
                    r.flags = "undefined".into();
                }
                rows.push(r);
            }
        }
    }

    let mut first_replicate: BTreeMap<&str, Vec<_>> = BTreeMap::new();
    for d in &bundle.documents {
        first_replicate.entry(d.backend_id.as_str()).or_default().push(d);
    }
    for (backend, docs) in first_replicate {
        let r0 = docs.iter().map(|d| d.replicate).min().unwrap_or(0);
        let docs: Vec<_> = docs.into_iter().filter(|d| d.replicate == r0).cloned().collect();
        for budget in budgets.iter() {
            let mut r = MetricRow::new("answer_length_rho", backend, None, 0);
            r.budget = Some(budget.words());
            r.replicate = Some(r0);
            match answer_length_salience_correlation(answers, &docs, budget) {
                Ok(c) => {
                    r.n = c.n;
                    match c.test {
                        Some(t) => {
                            r.value = Some(t.rho);
                            r.p_value = Some(t.p_value);
                        }
                        None => r.flags = "undefined".into(),
                    }
                }
                Err(e) => {
                    log::info!("answer-length correlation for {backend} at {budget}: {e}");
                    r.flags = "insufficient".into();
                }
            }
            rows.push(r);
        }
    }
    Ok(rows)
}

/// One line of a temperature sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub temperature: f64,
    pub mean_tlr: f64,
    /// Mean absolute deviation of replicate word counts around their mean,
    /// averaged over (document, budget) cells.
    pub length_mad: f64,
    /// Mean over replicates of incremental consistency.
    pub ic: f64,
    pub summaries: usize,
}

pub fn sweep_row(
    temperature: f64,
    summaries: &[SummaryRecord],
    verdicts: &[ClaimVerdict],
    budgets: &BudgetSet,
) -> Result<SweepRow> {
    let n = summaries.len().max(1) as f64;
    let mean_tlr = summaries
        .iter()
        .map(|s| target_length_ratio(s.word_count, s.budget))
        .sum::<f64>()
        / n;

    let mut cells: BTreeMap<(&str, &str, u32), Vec<f64>> = BTreeMap::new();
    for s in summaries {
        cells
            .entry((s.backend_id.as_str(), s.doc_id.as_str(), s.budget.words()))
            .or_default()
            .push(s.word_count as f64);
    }
    let mads: Vec<f64> = cells
        .values()
        .map(|xs| {
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            xs.iter().map(|x| (x - m).abs()).sum::<f64>() / xs.len() as f64
        })
        .collect();
    let length_mad = if mads.is_empty() { 0.0 } else { mads.iter().sum::<f64>() / mads.len() as f64 };

    let ics = group_verdicts(verdicts)
        .values()
        .map(|vs| incremental_consistency(vs, budgets).map(|ic| ic.value))
        .collect::<Result<Vec<_>>>()?;
    let ic = if ics.is_empty() { 1.0 } else { ics.iter().sum::<f64>() / ics.len() as f64 };
    Ok(SweepRow {
        temperature,
        mean_tlr,
        length_mad,
        ic,
        summaries: summaries.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::LengthBudget;

    #[test]
    fn sweep_statistics() {
        let b10 = LengthBudget::new(10).unwrap();
        let summaries = vec![
            SummaryRecord::new("d", b10, 0, "m", "a b c d e f g h"),
            SummaryRecord::new("d", b10, 1, "m", "a b c d e f g h i j"),
        ];
        let row = sweep_row(0.7, &summaries, &[], &BudgetSet::from_words(&[10]).unwrap()).unwrap();
        assert!((row.mean_tlr - 0.9).abs() < 1e-12);
        assert_eq!(row.length_mad, 1.0);
        assert_eq!(row.ic, 1.0);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }
}
