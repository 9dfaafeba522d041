//! Subjective-logic opinions over `q` classes and the evidence they come from.
//!
//! An opinion `{b, u}` distributes unit mass over `q` beliefs plus one
//! uncertainty mass. It is tied to non-negative evidence `e` through the
//! Dirichlet parameters `alpha = e + 1` and strength `S = sum(alpha)`:
//! `b_k = e_k / S`, `u = q / S`.
//!
//! Aggregation is the conflictive (uncertainty-weighted averaging) rule,
//! which is the same as averaging evidence element-wise. Conflict between
//! two opinions is the projected distance discounted by their conjunctive
//! certainty.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `u + sum(b) = 1` accepted by [`Opinion::new`].
pub const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Opinion {
    beliefs: Vec<f64>,
    uncertainty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceVector(Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct BaseRate(Vec<f64>);

/// How several opinions are reduced to one.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FoldPolicy {
    /// Uniform mean of all evidence vectors; order-invariant.
    #[default]
    Mean,
    /// Left fold of pairwise aggregation; order-dependent.
    Sequential,
}

impl std::str::FromStr for FoldPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(FoldPolicy::Mean),
            "sequential" => Ok(FoldPolicy::Sequential),
            other => Err(Error::contract(format!("unknown fold policy `{other}`"))),
        }
    }
}

fn check_classes(q: usize) -> Result<()> {
    if q < 2 {
        return Err(Error::contract(format!("need at least 2 classes, got {q}")));
    }
    Ok(())
}

impl EvidenceVector {
    pub fn new(evidence: Vec<f64>) -> Result<Self> {
        check_classes(evidence.len())?;
        if let Some(e) = evidence.iter().find(|e| !(**e >= 0.0) || !e.is_finite()) {
            return Err(Error::contract(format!(
                "evidence must be finite and non-negative, got {e}"
            )));
        }
        Ok(Self(evidence))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn class_count(&self) -> usize {
        self.0.len()
    }

    pub fn alpha(&self) -> Vec<f64> {
        self.0.iter().map(|e| e + 1.0).collect()
    }

    /// Dirichlet strength `S = sum(e) + q`.
    pub fn strength(&self) -> f64 {
        self.0.iter().sum::<f64>() + self.0.len() as f64
    }

    pub fn to_opinion(&self) -> Opinion {
        let s = self.strength();
        Opinion {
            beliefs: self.0.iter().map(|e| e / s).collect(),
            uncertainty: self.0.len() as f64 / s,
        }
    }

    /// Element-wise mean, summed in sorted order so the result does not
    /// depend on the order of `items`.
    pub fn mean(items: &[EvidenceVector]) -> Result<EvidenceVector> {
        let first = items
            .first()
            .ok_or_else(|| Error::contract("cannot average an empty evidence list"))?;
        let q = first.class_count();
        if let Some(bad) = items.iter().find(|e| e.class_count() != q) {
            return Err(Error::contract(format!(
                "class count mismatch: {q} vs {}",
                bad.class_count()
            )));
        }
        let n = items.len() as f64;
        let mut column = Vec::with_capacity(items.len());
        let mean = (0..q)
            .map(|k| {
                column.clear();
                column.extend(items.iter().map(|e| e.0[k]));
                column.sort_by(f64::total_cmp);
                column.iter().sum::<f64>() / n
            })
            .collect();
        Ok(EvidenceVector(mean))
    }
}

impl Opinion {
    pub fn new(beliefs: Vec<f64>, uncertainty: f64) -> Result<Self> {
        check_classes(beliefs.len())?;
        if beliefs.iter().any(|b| !(*b >= 0.0)) || !(uncertainty >= 0.0) {
            return Err(Error::contract(
                "belief and uncertainty masses must be non-negative",
            ));
        }
        let total = uncertainty + beliefs.iter().sum::<f64>();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::contract(format!(
                "opinion masses sum to {total}, expected 1"
            )));
        }
        Ok(Self {
            beliefs,
            uncertainty,
        })
    }

    pub fn vacuous(q: usize) -> Result<Self> {
        check_classes(q)?;
        Ok(Self {
            beliefs: vec![0.0; q],
            uncertainty: 1.0,
        })
    }

    pub fn beliefs(&self) -> &[f64] {
        &self.beliefs
    }

    pub fn uncertainty(&self) -> f64 {
        self.uncertainty
    }

    pub fn class_count(&self) -> usize {
        self.beliefs.len()
    }

    /// Index of the largest belief; ties resolve to the lowest index.
    pub fn decision(&self) -> usize {
        let mut best = 0;
        for (k, &b) in self.beliefs.iter().enumerate().skip(1) {
            if b > self.beliefs[best] {
                best = k;
            }
        }
        best
    }
}

impl BaseRate {
    pub fn new(rates: Vec<f64>) -> Result<Self> {
        check_classes(rates.len())?;
        let total: f64 = rates.iter().sum();
        if rates.iter().any(|a| !(*a >= 0.0)) || (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::contract(
                "base rates must be non-negative and sum to 1",
            ));
        }
        Ok(Self(rates))
    }

    pub fn uniform(q: usize) -> Self {
        Self(vec![1.0 / q as f64; q])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

pub fn evidence_to_opinion(e: &EvidenceVector) -> Opinion {
    e.to_opinion()
}

/// Inverse of [`evidence_to_opinion`]: `S = q / u`, `e_k = b_k S`.
pub fn opinion_to_evidence(w: &Opinion) -> Result<EvidenceVector> {
    if w.uncertainty <= 0.0 {
        return Err(Error::Singular(
            "zero uncertainty corresponds to infinite evidence".into(),
        ));
    }
    let s = w.class_count() as f64 / w.uncertainty;
    Ok(EvidenceVector(
        w.beliefs.iter().map(|b| (b * s).max(0.0)).collect(),
    ))
}

fn same_classes(a: &Opinion, b: &Opinion) -> Result<()> {
    if a.class_count() != b.class_count() {
        return Err(Error::contract(format!(
            "class count mismatch: {} vs {}",
            a.class_count(),
            b.class_count()
        )));
    }
    Ok(())
}

/// Conflictive aggregation of two opinions.
///
/// `b_k = (b_k^A u^B + b_k^B u^A) / (u^A + u^B)`, `u = 2 u^A u^B / (u^A + u^B)`.
pub fn aggregate_pair(a: &Opinion, b: &Opinion) -> Result<Opinion> {
    same_classes(a, b)?;
    let (ua, ub) = (a.uncertainty, b.uncertainty);
    let denom = ua + ub;
    if denom <= 0.0 {
        return Err(Error::Singular("both opinions are dogmatic (u = 0)".into()));
    }
    let beliefs = a
        .beliefs
        .iter()
        .zip(&b.beliefs)
        .map(|(ba, bb)| (ba * ub + bb * ua) / denom)
        .collect();
    Ok(Opinion {
        beliefs,
        uncertainty: 2.0 * ua * ub / denom,
    })
}

/// Joint opinion of a non-empty list: the opinion of the mean evidence.
pub fn aggregate_all(opinions: &[Opinion]) -> Result<Opinion> {
    aggregate_with(opinions, FoldPolicy::Mean)
}

pub fn aggregate_with(opinions: &[Opinion], policy: FoldPolicy) -> Result<Opinion> {
    let first = opinions
        .first()
        .ok_or_else(|| Error::contract("cannot aggregate an empty opinion list"))?;
    match policy {
        FoldPolicy::Mean => {
            let evidence = opinions
                .iter()
                .map(|w| {
                    same_classes(first, w)?;
                    opinion_to_evidence(w)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(EvidenceVector::mean(&evidence)?.to_opinion())
        }
        FoldPolicy::Sequential => opinions[1..]
            .iter()
            .try_fold(first.clone(), |acc, w| aggregate_pair(&acc, w)),
    }
}

/// `p_k = b_k + a_k u`.
pub fn projected_probability(w: &Opinion, a: &BaseRate) -> Vec<f64> {
    w.beliefs
        .iter()
        .zip(&a.0)
        .map(|(b, ak)| b + ak * w.uncertainty)
        .collect()
}

/// Degree of conflict `C = pd * cc` with projected distance
/// `pd = 0.5 * sum_k |p_k^A - p_k^B|` and conjunctive certainty
/// `cc = (1 - u^A)(1 - u^B)`.
pub fn conflict_degree(a: &Opinion, b: &Opinion, rate: &BaseRate) -> Result<f64> {
    same_classes(a, b)?;
    if rate.0.len() != a.class_count() {
        return Err(Error::contract(
            "base rate length does not match class count",
        ));
    }
    let pa = projected_probability(a, rate);
    let pb = projected_probability(b, rate);
    let pd = 0.5 * pa.iter().zip(&pb).map(|(x, y)| (x - y).abs()).sum::<f64>();
    let cc = (1.0 - a.uncertainty) * (1.0 - b.uncertainty);
    Ok((pd * cc).clamp(0.0, 1.0))
}
