use serde::Serialize;

use crate::aggregation::{
    attend_with_weights, attention_weights, inter_view_aggregate, intra_view_aggregate, predict,
    AttentionContext, ViewBundle,
};
use crate::data::{CorruptionMask, MultiViewDataset};
use crate::diffcore::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::networks::ModelParams;
use crate::opinions::EvidenceVector;

use super::model::{batch_inputs, forward, ForwardOptions};

pub const HISTOGRAM_BINS: usize = 20;

/// Binned densities of uncertainty in `[0, 1]`, split by the corruption mask.
/// Each non-empty group's masses sum to 1; an empty group is all zeros.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UncertaintyHistograms {
    pub edges: Vec<f64>,
    pub overall_clean: Vec<f64>,
    pub overall_corrupted: Vec<f64>,
    pub local_clean: Vec<f64>,
    pub local_corrupted: Vec<f64>,
}

fn histogram(values: impl Iterator<Item = f64>, bins: usize) -> Vec<f64> {
    let mut counts = vec![0.0; bins];
    let mut n = 0usize;
    for u in values {
        let b = ((u * bins as f64).floor() as usize).min(bins - 1);
        counts[b] += 1.0;
        n += 1;
    }
    if n > 0 {
        counts.iter_mut().for_each(|c| *c /= n as f64);
    }
    counts
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// Accuracy on instances outside the mask; `None` without corruption.
    pub clean_accuracy: Option<f64>,
    pub corrupted_accuracy: Option<f64>,
    pub labels: Vec<usize>,
    pub predictions: Vec<usize>,
    pub corrupted: Vec<bool>,
    /// Uncertainty of the joint opinion, per instance.
    pub joint_uncertainty: Vec<f64>,
    /// Uncertainty after intra-view fusion, `[instance][view]`.
    pub local_uncertainty: Vec<Vec<f64>>,
    /// Mean pairwise conflict between fused view opinions over all instances.
    pub conflict_matrix: Vec<Vec<f64>>,
    pub histograms: UncertaintyHistograms,
    #[serde(skip)]
    pub bundles: Vec<ViewBundle>,
}

impl EvalReport {
    pub fn views(&self) -> usize {
        self.conflict_matrix.len()
    }

    pub fn mean_joint_uncertainty(&self) -> f64 {
        mean(&self.joint_uncertainty)
    }

    /// Joint uncertainties of instances whose mask flag equals `corrupted`.
    pub fn joint_uncertainty_where(&self, corrupted: bool) -> Vec<f64> {
        self.joint_uncertainty
            .iter()
            .zip(&self.corrupted)
            .filter(|(_, &c)| c == corrupted)
            .map(|(u, _)| *u)
            .collect()
    }

    /// Local uncertainties pooled over views, for instances whose mask flag
    /// equals `corrupted`.
    pub fn local_uncertainty_where(&self, corrupted: bool) -> Vec<f64> {
        self.local_uncertainty
            .iter()
            .zip(&self.corrupted)
            .filter(|(_, &c)| c == corrupted)
            .flat_map(|(u, _)| u.iter().copied())
            .collect()
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect()
}

/// Per-instance evidence at every stage, from a batched forward pass of the
/// networks followed by per-sample aggregation.
pub fn view_bundles(
    model: &ModelParams,
    ds: &MultiViewDataset,
    opts: ForwardOptions,
) -> Result<Vec<ViewBundle>> {
    if model.arch().view_dims != ds.dims() {
        return Err(Error::contract(format!(
            "model expects view widths {:?}, data has {:?}",
            model.arch().view_dims,
            ds.dims()
        )));
    }
    if model.arch().classes != ds.classes() {
        return Err(Error::contract(format!(
            "model has {} classes, data has {}",
            model.arch().classes,
            ds.classes()
        )));
    }
    let mut g = Graph::new();
    let x = batch_inputs(&mut g, ds.views());
    let fwd = forward(&mut g, model, &x, opts)?;
    let v = fwd.views();
    let common_mean = g.value(fwd.common_mean).clone();
    let specific: Vec<Tensor> = fwd.specific.iter().map(|&s| g.value(s).clone()).collect();
    let e_common = rows_of(g.value(fwd.e_common));
    let e_specific: Vec<Vec<Vec<f64>>> = fwd
        .e_specific
        .iter()
        .map(|&e| rows_of(g.value(e)))
        .collect();
    let wq = model.store.value(model.attention.query).clone();
    let wk = model.store.value(model.attention.key).clone();
    let wv = model.store.value(model.attention.value).clone();

    let mut out = Vec::with_capacity(ds.len());
    for n in 0..ds.len() {
        let common = EvidenceVector::new(e_common[n].clone())?;
        let spec = (0..v)
            .map(|i| EvidenceVector::new(e_specific[i][n].clone()))
            .collect::<Result<Vec<_>>>()?;
        let fused = if opts.intra_view {
            spec.iter()
                .map(|s| intra_view_aggregate(&common, s).map(|(e, _)| e))
                .collect::<Result<Vec<_>>>()?
        } else {
            spec.clone()
        };
        let c = common_mean.row_slice(n);
        let features: Vec<Vec<f64>> = specific
            .iter()
            .map(|s| s.row_slice(n).iter().zip(c).map(|(a, b)| a + b).collect())
            .collect();
        let evidence: Vec<Vec<f64>> = fused.iter().map(|e| e.values().to_vec()).collect();
        let ctx = AttentionContext::new(
            Tensor::from_rows(&features)?,
            Tensor::from_rows(&evidence)?,
            wq.clone(),
            wk.clone(),
            wv.clone(),
            opts.epsilon,
        )?;
        let weights = (0..v)
            .map(|i| {
                if opts.attention {
                    attention_weights(&ctx, i)
                } else {
                    Ok(vec![1.0 / v as f64; v])
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let attended = weights
            .iter()
            .map(|w| attend_with_weights(&ctx, w))
            .collect::<Result<Vec<_>>>()?;
        let ops: Vec<_> = attended.iter().map(EvidenceVector::to_opinion).collect();
        let (_, alpha) = inter_view_aggregate(&ops, opts.fold)?;
        let joint = EvidenceVector::new(alpha.iter().map(|a| (a - 1.0).max(0.0)).collect())?;
        out.push(ViewBundle {
            common,
            specific: spec,
            fused,
            attended,
            weights,
            joint,
        });
    }
    Ok(out)
}

/// Predict every instance of `ds` and collect uncertainty and conflict
/// statistics. `mask` marks corrupted instances.
pub fn evaluate(
    model: &ModelParams,
    ds: &MultiViewDataset,
    mask: Option<&CorruptionMask>,
    opts: ForwardOptions,
) -> Result<EvalReport> {
    let corrupted = match mask {
        Some(m) if m.samples != ds.len() => {
            return Err(Error::contract(format!(
                "mask covers {} instances, dataset has {}",
                m.samples,
                ds.len()
            )))
        }
        Some(m) => m.instances(),
        None => vec![false; ds.len()],
    };
    let bundles = view_bundles(model, ds, opts)?;
    let v = ds.view_count();
    let mut predictions = Vec::with_capacity(ds.len());
    let mut joint_uncertainty = Vec::with_capacity(ds.len());
    let mut local_uncertainty = Vec::with_capacity(ds.len());
    let mut conflict = vec![vec![0.0; v]; v];
    for b in &bundles {
        let (class, u) = predict(&b.joint_opinion());
        predictions.push(class);
        joint_uncertainty.push(u);
        local_uncertainty.push(b.local_uncertainty());
        let m = b.conflict_matrix()?;
        for (acc, row) in conflict.iter_mut().zip(&m) {
            for (a, x) in acc.iter_mut().zip(row) {
                *a += x;
            }
        }
    }
    if !bundles.is_empty() {
        let n = bundles.len() as f64;
        conflict.iter_mut().flatten().for_each(|c| *c /= n);
    }

    let labels = ds.labels().to_vec();
    let acc_where = |keep: &dyn Fn(usize) -> bool| -> Option<f64> {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| keep(i)).collect();
        if idx.is_empty() {
            return None;
        }
        let hits = idx.iter().filter(|&&i| predictions[i] == labels[i]).count();
        Some(hits as f64 / idx.len() as f64)
    };
    let accuracy = acc_where(&|_| true).unwrap_or(0.0);
    let (clean_accuracy, corrupted_accuracy) = if mask.is_some() {
        (acc_where(&|i| !corrupted[i]), acc_where(&|i| corrupted[i]))
    } else {
        (None, None)
    };

    let pick = |flag: bool| {
        joint_uncertainty
            .iter()
            .zip(&corrupted)
            .filter(move |(_, &c)| c == flag)
            .map(|(u, _)| *u)
    };
    let pick_local = |flag: bool| {
        local_uncertainty
            .iter()
            .zip(&corrupted)
            .filter(move |(_, &c)| c == flag)
            .flat_map(|(u, _)| u.iter().copied())
    };
    let histograms = UncertaintyHistograms {
        edges: (0..=HISTOGRAM_BINS)
            .map(|i| i as f64 / HISTOGRAM_BINS as f64)
            .collect(),
        overall_clean: histogram(pick(false), HISTOGRAM_BINS),
        overall_corrupted: histogram(pick(true), HISTOGRAM_BINS),
        local_clean: histogram(pick_local(false), HISTOGRAM_BINS),
        local_corrupted: histogram(pick_local(true), HISTOGRAM_BINS),
    };

    Ok(EvalReport {
        accuracy,
        clean_accuracy,
        corrupted_accuracy,
        labels,
        predictions,
        corrupted,
        joint_uncertainty,
        local_uncertainty,
        conflict_matrix: conflict,
        histograms,
        bundles,
    })
}

/// One-sided Mann-Whitney test that `x` tends to be smaller than `y`,
/// using the normal approximation with tie correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankTest {
    pub u: f64,
    pub z: f64,
    pub p_value: f64,
}

pub fn mann_whitney_less(x: &[f64], y: &[f64]) -> Result<RankTest> {
    use statrs::distribution::{ContinuousCDF, Normal};
    let (n1, n2) = (x.len() as f64, y.len() as f64);
    if x.is_empty() || y.is_empty() {
        return Err(Error::contract("rank test needs two non-empty samples"));
    }
    let mut all: Vec<(f64, bool)> = x
        .iter()
        .map(|&a| (a, true))
        .chain(y.iter().map(|&b| (b, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_x = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        rank_x += all[i..=j].iter().filter(|e| e.1).count() as f64 * avg;
        i = j + 1;
    }
    let u = rank_x - n1 * (n1 + 1.0) / 2.0;
    let n = n1 + n2;
    let var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    let z = if var > 0.0 {
        (u - n1 * n2 / 2.0) / var.sqrt()
    } else {
        0.0
    };
    let normal = Normal::new(0.0, 1.0).map_err(|e| Error::contract(e.to_string()))?;
    Ok(RankTest {
        u,
        z,
        p_value: normal.cdf(z),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_test_matches_reference_values() {
        // U and p from scipy.stats.mannwhitneyu(alternative="less",
        // method="asymptotic", use_continuity=False)
        let x = [0.1, 0.4, 0.4, 0.9, 1.3, 0.2, 0.05, 0.7];
        let y = [0.5, 1.1, 0.4, 2.0, 1.6, 0.8, 0.9, 1.7, 1.2, 0.3];
        let r = mann_whitney_less(&x, &y).unwrap();
        assert_eq!(r.u, 17.5);
        // statrs' normal cdf carries ~1e-11 relative error
        assert!(
            (r.p_value / 0.022516004540783376 - 1.0).abs() < 1e-9,
            "{}",
            r.p_value
        );
    }

    #[test]
    fn median_and_histogram() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        let h = histogram([0.0, 0.5, 1.0, 0.99].into_iter(), 4);
        assert_eq!(h, vec![0.25, 0.0, 0.25, 0.5]);
        assert_eq!(histogram(std::iter::empty(), 3), vec![0.0; 3]);
    }

    #[test]
    fn rank_test_detects_shift() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 / 100.0).collect();
        let y: Vec<f64> = (0..50).map(|i| 0.3 + i as f64 / 100.0).collect();
        let t = mann_whitney_less(&x, &y).unwrap();
        assert!(t.p_value < 1e-4);
        let back = mann_whitney_less(&y, &x).unwrap();
        assert!(back.p_value > 0.99);
        let same = mann_whitney_less(&x, &x).unwrap();
        assert!((same.p_value - 0.5).abs() < 1e-12);
    }
}
