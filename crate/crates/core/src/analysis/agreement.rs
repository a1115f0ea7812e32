use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::domain::{AtomicClaim, BudgetSet, ClaimVerdict, LengthBudget};
use crate::error::{Error, Result};
use crate::metrics::{align_pair, claim_inclusion_vector, krippendorff_alpha, self_agreement, ClaimInclusionVector, ClaimUniverse};

/// How two different backends are compared off the diagonal.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossMode {
    /// Replicate 0 of each backend.
    #[default]
    FirstReplicate,
    /// Mean alpha over all replicate pairs of the two backends.
    AllReplicatePairs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementMatrix {
    pub budget: LengthBudget,
    pub backend_ids: Vec<String>,
    /// Symmetric; `cells[i][i]` repeats `diagonal[i]`.
    pub cells: Vec<Vec<Option<f64>>>,
    /// Self-agreement over replicates; `None` with a single replicate.
    pub diagonal: Vec<Option<f64>>,
}

fn pair_alpha(a: &ClaimInclusionVector, b: &ClaimInclusionVector) -> Result<Option<f64>> {
    let (x, y) = match align_pair(a, b) {
        Ok(p) => p,
        Err(Error::Alignment(msg)) => {
            log::warn!("{msg}");
            return Ok(None);
        }
        Err(e) => return Err(e),
    };
    if x.len() < 2 {
        return Ok(None);
    }
    krippendorff_alpha(&x, &y).map(Some)
}

/// One matrix per budget over every backend that has verdicts.
pub fn build_agreement_matrices(
    claims: &[AtomicClaim],
    verdicts: &[ClaimVerdict],
    budgets: &BudgetSet,
    mode: CrossMode,
) -> Result<Vec<AgreementMatrix>> {
    let universe = ClaimUniverse::new(claims)?;
    let mut replicates: BTreeMap<&str, BTreeSet<u32>> = BTreeMap::new();
    for v in verdicts {
        replicates.entry(v.backend_id.as_str()).or_default().insert(v.replicate);
    }
    let backend_ids: Vec<String> = replicates.keys().map(|s| s.to_string()).collect();

    let mut out = Vec::new();
    for budget in budgets.iter() {
        let mut vectors: Vec<Vec<ClaimInclusionVector>> = Vec::new();
        for (backend, reps) in &replicates {
            vectors.push(
                reps.iter()
                    .map(|&r| claim_inclusion_vector(&universe, verdicts, backend, budget, r))
                    .collect::<Result<_>>()?,
            );
        }
        let k = backend_ids.len();
        let mut cells = vec![vec![None; k]; k];
        let mut diagonal = Vec::with_capacity(k);
        for (i, reps) in vectors.iter().enumerate() {
            let aligned = reps.iter().all(|v| v.item_order == reps[0].item_order);
            let d = if reps.len() < 2 {
                None
            } else if aligned && reps[0].bits.len() >= 2 {
                let bits: Vec<&[bool]> = reps.iter().map(|v| v.bits.as_slice()).collect();
                Some(self_agreement(&bits)?)
            } else {
                let mut vals = Vec::new();
                for a in 0..reps.len() {
                    for b in a + 1..reps.len() {
                        vals.extend(pair_alpha(&reps[a], &reps[b])?);
                    }
                }
                (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
            };
            diagonal.push(d);
            cells[i][i] = d;
        }
        for i in 0..k {
            for j in i + 1..k {
                let value = match mode {
                    CrossMode::FirstReplicate => pair_alpha(&vectors[i][0], &vectors[j][0])?,
                    CrossMode::AllReplicatePairs => {
                        let mut vals = Vec::new();
                        for a in &vectors[i] {
                            for b in &vectors[j] {
                                vals.extend(pair_alpha(a, b)?);
                            }
                        }
                        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
                    }
                };
                cells[i][j] = value;
                cells[j][i] = value;
            }
        }
        out.push(AgreementMatrix {
            budget,
            backend_ids: backend_ids.clone(),
            cells,
            diagonal,
        });
    }
    Ok(out)
}
