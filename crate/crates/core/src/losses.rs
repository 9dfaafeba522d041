//! Training objectives, expressed as scalar graph nodes.
//!
//! Dirichlet parameters enter as `n x q` tensors `alpha = e + 1`; labels as
//! `n x q` one-hot constants. Per-sample terms are averaged over the batch.

use serde::{Deserialize, Serialize};

use crate::diffcore::special::lgamma;
use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Floor applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Per-epoch values of every objective term.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub epoch: usize,
    pub lambda: f64,
    pub adv: f64,
    pub cml: f64,
    pub com: f64,
    pub spe: f64,
    pub h1: f64,
    pub h2: f64,
    pub con: f64,
    pub overall: f64,
    /// Cross-entropy minimized by the view discriminator.
    pub discriminator: f64,
}

impl LossBreakdown {
    pub const HEADER: [&'static str; 11] = [
        "epoch",
        "lambda",
        "adv",
        "cml",
        "com",
        "spe",
        "h1",
        "h2",
        "con",
        "overall",
        "discriminator",
    ];

    pub fn values(&self) -> [f64; 10] {
        [
            self.lambda,
            self.adv,
            self.cml,
            self.com,
            self.spe,
            self.h1,
            self.h2,
            self.con,
            self.overall,
            self.discriminator,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }

    /// `|overall - (h1 + h2 + delta com + eta spe)|`.
    pub fn decomposition_gap(&self, delta: f64, eta: f64) -> f64 {
        (self.overall - (self.h1 + self.h2 + delta * self.com + eta * self.spe)).abs()
    }
}

/// `lambda_t = min(1, t / horizon)`.
pub fn lambda_schedule(epoch: usize, horizon: usize) -> f64 {
    if horizon == 0 {
        return 1.0;
    }
    (epoch as f64 / horizon as f64).min(1.0)
}

/// One-hot `n x width` constant from class indices.
pub fn one_hot(labels: &[usize], width: usize) -> Tensor {
    let mut t = Tensor::zeros(labels.len(), width);
    for (r, &k) in labels.iter().enumerate() {
        t.set(r, k, 1.0);
    }
    t
}

fn same_shape(g: &Graph, op: &'static str, a: Var, b: Var) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::Shape {
            op,
            lhs: g.shape(a),
            rhs: g.shape(b),
        });
    }
    Ok(())
}

fn mean_of(g: &mut Graph, terms: &[Var]) -> Result<Var> {
    let (first, rest) = terms
        .split_first()
        .ok_or_else(|| Error::contract("cannot average zero terms"))?;
    let mut acc = *first;
    for t in rest {
        acc = g.add(acc, *t)?;
    }
    Ok(g.scale(acc, 1.0 / terms.len() as f64))
}

fn sum_of(g: &mut Graph, terms: &[Var]) -> Result<Var> {
    let (first, rest) = terms
        .split_first()
        .ok_or_else(|| Error::contract("cannot sum zero terms"))?;
    let mut acc = *first;
    for t in rest {
        acc = g.add(acc, *t)?;
    }
    Ok(acc)
}

/// Mean view-classification cross-entropy over all (sample, view) pairs.
/// `view_probs[i]` holds the discriminator output for representations of
/// view `i`, so the true label of every row is `i`.
pub fn view_cross_entropy(g: &mut Graph, view_probs: &[Var]) -> Result<Var> {
    let v = view_probs.len();
    let mut per_view = Vec::with_capacity(v);
    for (i, &z) in view_probs.iter().enumerate() {
        if g.shape(z)[1] != v {
            return Err(Error::contract(format!(
                "discriminator output has {} columns for {v} views",
                g.shape(z)[1]
            )));
        }
        let p = g.column(z, i)?;
        let p = g.clamp(p, PROB_FLOOR, 1.0);
        let logp = g.log(p)?;
        let m = g.mean(logp);
        per_view.push(g.neg(m));
    }
    mean_of(g, &per_view)
}

/// `L_adv = exp(-CE)` with CE from [`view_cross_entropy`]; lies in `(0, 1]`.
pub fn adv_loss(g: &mut Graph, view_probs: &[Var]) -> Result<Var> {
    let ce = view_cross_entropy(g, view_probs)?;
    let neg = g.neg(ce);
    Ok(g.exp(neg))
}

/// Binary cross-entropy of the per-class sigmoid predictions, averaged over
/// samples, views and classes.
pub fn cml_loss(g: &mut Graph, predictions: &[Var], y: Var) -> Result<Var> {
    let y_t = g.value(y).clone();
    let not_y = g.constant(y_t.map(|a| 1.0 - a));
    let mut per_view = Vec::with_capacity(predictions.len());
    for &p in predictions {
        same_shape(g, "cml_loss", p, y)?;
        let p = g.clamp(p, PROB_FLOOR, 1.0 - PROB_FLOOR);
        let logp = g.log(p)?;
        let neg_p = g.neg(p);
        let one_minus = g.offset(neg_p, 1.0);
        let log_not = g.log(one_minus)?;
        let a = g.mul(y, logp)?;
        let b = g.mul(not_y, log_not)?;
        let s = g.add(a, b)?;
        let m = g.mean(s);
        per_view.push(g.neg(m));
    }
    mean_of(g, &per_view)
}

pub fn com_loss(g: &mut Graph, adv: Var, cml: Var) -> Result<Var> {
    g.add(adv, cml)
}

/// `sum_i ((s^i)^T c)^2`, averaged over the batch.
pub fn spe_loss(g: &mut Graph, specific: &[Var], common: Var) -> Result<Var> {
    let mut squares = Vec::with_capacity(specific.len());
    for &s in specific {
        let d = g.dot(s, common)?;
        squares.push(g.mul(d, d)?);
    }
    let total = sum_of(g, &squares)?;
    Ok(g.mean(total))
}

fn check_alpha(g: &Graph, alpha: Var, y: Var) -> Result<()> {
    same_shape(g, "dirichlet loss", alpha, y)?;
    if let Some(a) = g.value(alpha).data().iter().find(|a| !(**a >= 1.0)) {
        return Err(Error::contract(format!(
            "Dirichlet parameters must be >= 1, got {a}"
        )));
    }
    Ok(())
}

/// Expected cross-entropy under `Dir(alpha)`:
/// `sum_k y_k (psi(S) - psi(alpha_k))`, averaged over the batch.
pub fn ace_loss(g: &mut Graph, alpha: Var, y: Var) -> Result<Var> {
    check_alpha(g, alpha, y)?;
    let s = g.sum_rows(alpha);
    let psi_s = g.digamma(s)?;
    let psi_a = g.digamma(alpha)?;
    let diff = g.sub(psi_s, psi_a)?;
    let picked = g.mul(y, diff)?;
    let per_row = g.sum_rows(picked);
    Ok(g.mean(per_row))
}

/// `KL[Dir(alpha_tilde) || Dir(1)]` with `alpha_tilde = y + (1 - y) * alpha`,
/// averaged over the batch.
pub fn kl_loss(g: &mut Graph, alpha: Var, y: Var) -> Result<Var> {
    check_alpha(g, alpha, y)?;
    let q = g.shape(alpha)[1] as f64;
    let not_y = g.constant(g.value(y).map(|a| 1.0 - a));
    let masked = g.mul(not_y, alpha)?;
    let tilde = g.add(y, masked)?;
    let s = g.sum_rows(tilde);
    let lg_s = g.lgamma(s)?;
    let lg_a = g.lgamma(tilde)?;
    let lg_a = g.sum_rows(lg_a);
    let log_norm = g.sub(lg_s, lg_a)?;
    let log_norm = g.offset(log_norm, -lgamma(q));
    let psi_a = g.digamma(tilde)?;
    let psi_s = g.digamma(s)?;
    let dpsi = g.sub(psi_a, psi_s)?;
    let excess = g.offset(tilde, -1.0);
    let weighted = g.mul(excess, dpsi)?;
    let weighted = g.sum_rows(weighted);
    let kl = g.add(log_norm, weighted)?;
    Ok(g.mean(kl))
}

/// `L_ace + lambda_t * L_KL`.
pub fn acc_loss(g: &mut Graph, alpha: Var, y: Var, lambda: f64) -> Result<Var> {
    let ace = ace_loss(g, alpha, y)?;
    if lambda == 0.0 {
        return Ok(ace);
    }
    let kl = kl_loss(g, alpha, y)?;
    let kl = g.scale(kl, lambda);
    g.add(ace, kl)
}

/// Per-sample (`n x 1`) conflict degree between the opinions induced by two
/// Dirichlet parameter tensors, with uniform base rates.
pub fn conflict_rows(g: &mut Graph, alpha_a: Var, alpha_b: Var) -> Result<Var> {
    same_shape(g, "conflict", alpha_a, alpha_b)?;
    let q = g.shape(alpha_a)[1] as f64;
    let opinion = |g: &mut Graph, alpha: Var| -> Result<(Var, Var)> {
        let s = g.sum_rows(alpha);
        let k = g.constant(Tensor::scalar(q));
        let u = g.div(k, s)?;
        let e = g.offset(alpha, -1.0);
        let b = g.div(e, s)?;
        let share = g.scale(u, 1.0 / q);
        let p = g.add(b, share)?;
        Ok((p, u))
    };
    let (pa, ua) = opinion(g, alpha_a)?;
    let (pb, ub) = opinion(g, alpha_b)?;
    let diff = g.sub(pa, pb)?;
    let diff = g.abs(diff);
    let pd = g.sum_rows(diff);
    let pd = g.scale(pd, 0.5);
    let na = g.neg(ua);
    let ca = g.offset(na, 1.0);
    let nb = g.neg(ub);
    let cb = g.offset(nb, 1.0);
    let cc = g.mul(ca, cb)?;
    g.mul(pd, cc)
}

fn mean_conflict(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let c = conflict_rows(g, a, b)?;
    Ok(g.mean(c))
}

/// Dirichlet parameters of the intra-view stage for one batch.
#[derive(Debug, Clone)]
pub struct IntraViewAlphas {
    /// Fused per-view parameters `alpha^i`.
    pub fused: Vec<Var>,
    pub common: Var,
    /// Per-view specific parameters `alpha_s^i`.
    pub specific: Vec<Var>,
}

/// `(1/v) sum_i [ace(alpha^i) + ace(alpha_c) + ace(alpha_s^i) + gamma C(w_c, w_s^i)]`.
pub fn h1_loss(g: &mut Graph, alphas: &IntraViewAlphas, y: Var, gamma: f64) -> Result<Var> {
    let v = alphas.fused.len();
    if v == 0 || alphas.specific.len() != v {
        return Err(Error::contract(
            "h1 loss needs matching fused and specific views",
        ));
    }
    let common_ace = ace_loss(g, alphas.common, y)?;
    let mut terms = Vec::with_capacity(v);
    for i in 0..v {
        let fused = ace_loss(g, alphas.fused[i], y)?;
        let spec = ace_loss(g, alphas.specific[i], y)?;
        let mut t = g.add(fused, common_ace)?;
        t = g.add(t, spec)?;
        if gamma != 0.0 {
            let c = mean_conflict(g, alphas.common, alphas.specific[i])?;
            let c = g.scale(c, gamma);
            t = g.add(t, c)?;
        }
        terms.push(t);
    }
    mean_of(g, &terms)
}

/// `(1/(v-1)) sum_p sum_{q != p} C(w^p, w^q)`, averaged over the batch.
/// Zero for a single view.
pub fn con_loss(g: &mut Graph, alphas: &[Var]) -> Result<Var> {
    let v = alphas.len();
    if v < 2 {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let mut pairs = Vec::with_capacity(v * (v - 1) / 2);
    for p in 0..v {
        for q in p + 1..v {
            pairs.push(mean_conflict(g, alphas[p], alphas[q])?);
        }
    }
    let total = sum_of(g, &pairs)?;
    // each unordered pair appears twice in the double sum
    Ok(g.scale(total, 2.0 / (v - 1) as f64))
}

/// `acc(alpha) + sum_i acc(alpha_hat^i) + gamma L_con(alpha^i)`.
pub fn h2_loss(
    g: &mut Graph,
    joint: Var,
    attended: &[Var],
    fused: &[Var],
    y: Var,
    lambda: f64,
    gamma: f64,
) -> Result<Var> {
    let mut terms = vec![acc_loss(g, joint, y, lambda)?];
    for &a in attended {
        terms.push(acc_loss(g, a, y, lambda)?);
    }
    if gamma != 0.0 {
        let con = con_loss(g, fused)?;
        terms.push(g.scale(con, gamma));
    }
    sum_of(g, &terms)
}

/// Scalar handles of every term of the overall objective.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub adv: Var,
    pub cml: Var,
    pub com: Var,
    pub spe: Var,
    pub h1: Var,
    pub h2: Var,
    pub con: Var,
    pub overall: Var,
}

/// `L_H1 + L_H2 + delta L_com + eta L_spe`.
pub fn overall_loss(
    g: &mut Graph,
    h1: Var,
    h2: Var,
    com: Var,
    spe: Var,
    delta: f64,
    eta: f64,
) -> Result<Var> {
    let a = g.add(h1, h2)?;
    let b = g.scale(com, delta);
    let c = g.scale(spe, eta);
    let ab = g.add(a, b)?;
    g.add(ab, c)
}

impl LossTerms {
    pub fn breakdown(
        &self,
        g: &Graph,
        epoch: usize,
        lambda: f64,
        discriminator: f64,
    ) -> LossBreakdown {
        let val = |v: Var| g.value(v).item();
        LossBreakdown {
            epoch,
            lambda,
            adv: val(self.adv),
            cml: val(self.cml),
            com: val(self.com),
            spe: val(self.spe),
            h1: val(self.h1),
            h2: val(self.h2),
            con: val(self.con),
            overall: val(self.overall),
            discriminator,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar(g: &Graph, v: Var) -> f64 {
        g.value(v).item()
    }

    fn consts(g: &mut Graph, rows: &[Vec<f64>]) -> Var {
        g.constant(Tensor::from_rows(rows).unwrap())
    }

    #[test]
    fn adv_examples() {
        let mut g = Graph::new();
        let z0 = consts(&mut g, &[vec![1.0, 0.0]]);
        let z1 = consts(&mut g, &[vec![0.0, 1.0]]);
        let perfect = adv_loss(&mut g, &[z0, z1]).unwrap();
        assert_abs_diff_eq!(scalar(&g, perfect), 1.0, epsilon = 1e-15);
        let u = consts(&mut g, &[vec![0.5, 0.5], vec![0.5, 0.5]]);
        let uniform = adv_loss(&mut g, &[u, u]).unwrap();
        assert_abs_diff_eq!(scalar(&g, uniform), 0.5, epsilon = 1e-12);
        let bad = consts(&mut g, &[vec![0.0, 1.0]]);
        let worst = adv_loss(&mut g, &[bad, z0]).unwrap();
        assert!(scalar(&g, worst) < 1e-5);
    }

    #[test]
    fn cml_examples() {
        let mut g = Graph::new();
        let y = consts(&mut g, &[vec![1.0, 0.0]]);
        let exact = cml_loss(&mut g, &[y], y).unwrap();
        assert!(scalar(&g, exact) < 1e-11);
        let half = consts(&mut g, &[vec![0.5, 0.5]]);
        let l = cml_loss(&mut g, &[half, half], y).unwrap();
        assert_abs_diff_eq!(scalar(&g, l), std::f64::consts::LN_2, epsilon = 1e-12);
        let mut last = f64::INFINITY;
        for p in [0.2, 0.5, 0.8, 0.95] {
            let yh = consts(&mut g, &[vec![p, 0.3]]);
            let l = cml_loss(&mut g, &[yh], y).unwrap();
            assert!(scalar(&g, l) < last);
            last = scalar(&g, l);
        }
    }

    #[test]
    fn spe_examples() {
        let mut g = Graph::new();
        let s = consts(&mut g, &[vec![1.0, 2.0]]);
        let c = consts(&mut g, &[vec![2.0, -1.0]]);
        let l = spe_loss(&mut g, &[s], c).unwrap();
        assert_eq!(scalar(&g, l), 0.0);
        let s = consts(&mut g, &[vec![1.0, 1.0]]);
        let c = consts(&mut g, &[vec![1.0, 2.0]]);
        let l = spe_loss(&mut g, &[s], c).unwrap();
        assert_abs_diff_eq!(scalar(&g, l), 9.0, epsilon = 1e-15);
        let wide = consts(&mut g, &[vec![1.0, 1.0, 1.0]]);
        assert!(spe_loss(&mut g, &[wide], c).is_err());
    }

    #[test]
    fn ace_examples() {
        let mut g = Graph::new();
        let y = consts(&mut g, &[vec![1.0, 0.0]]);
        for (alpha, expected) in [([2.0, 1.0], 0.5), ([100.0, 1.0], 0.01), ([1.0, 1.0], 1.0)] {
            let a = consts(&mut g, &[alpha.to_vec()]);
            let l = ace_loss(&mut g, a, y).unwrap();
            assert_abs_diff_eq!(scalar(&g, l), expected, epsilon = 1e-12);
        }
        let bad = consts(&mut g, &[vec![0.5, 1.0]]);
        assert!(matches!(ace_loss(&mut g, bad, y), Err(Error::Contract(_))));
    }

    #[test]
    fn kl_examples() {
        let mut g = Graph::new();
        // y = (0, 1) leaves alpha = (2, 1) unmasked
        let y = consts(&mut g, &[vec![0.0, 1.0]]);
        let a = consts(&mut g, &[vec![2.0, 1.0]]);
        let l = kl_loss(&mut g, a, y).unwrap();
        assert_abs_diff_eq!(scalar(&g, l), std::f64::consts::LN_2 - 0.5, epsilon = 1e-12);
        let ones = consts(&mut g, &[vec![1.0, 1.0, 1.0]]);
        let y3 = consts(&mut g, &[vec![0.0, 0.0, 1.0]]);
        let l = kl_loss(&mut g, ones, y3).unwrap();
        assert_abs_diff_eq!(scalar(&g, l), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn acc_examples() {
        let mut g = Graph::new();
        let y = consts(&mut g, &[vec![1.0, 0.0]]);
        let a = consts(&mut g, &[vec![2.0, 1.0]]);
        let l0 = acc_loss(&mut g, a, y, 0.0).unwrap();
        assert_abs_diff_eq!(scalar(&g, l0), 0.5, epsilon = 1e-12);
        // mask maps (2, 1) with y = (1, 0) to (1, 1): KL vanishes
        let l1 = acc_loss(&mut g, a, y, 1.0).unwrap();
        assert_abs_diff_eq!(scalar(&g, l1), 0.5, epsilon = 1e-12);
        let b = consts(&mut g, &[vec![3.0, 4.0]]);
        let base = acc_loss(&mut g, b, y, 0.0).unwrap();
        let half = acc_loss(&mut g, b, y, 0.5).unwrap();
        let full = acc_loss(&mut g, b, y, 1.0).unwrap();
        let (b0, b1, b2) = (scalar(&g, base), scalar(&g, half), scalar(&g, full));
        assert_abs_diff_eq!(b1 - b0, (b2 - b0) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn schedule() {
        assert_eq!(lambda_schedule(0, 50), 0.0);
        assert_eq!(lambda_schedule(25, 50), 0.5);
        assert_eq!(lambda_schedule(50, 50), 1.0);
        assert_eq!(lambda_schedule(80, 50), 1.0);
    }

    #[test]
    fn h1_single_view_without_conflict() {
        let mut g = Graph::new();
        let y = consts(&mut g, &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let f = consts(&mut g, &[vec![3.0, 1.0], vec![1.5, 2.0]]);
        let c = consts(&mut g, &[vec![2.0, 1.0], vec![1.0, 1.0]]);
        let s = consts(&mut g, &[vec![4.0, 1.0], vec![2.0, 3.0]]);
        let alphas = IntraViewAlphas {
            fused: vec![f],
            common: c,
            specific: vec![s],
        };
        let h1 = h1_loss(&mut g, &alphas, y, 0.0).unwrap();
        let parts = [f, c, s].map(|a| {
            let l = ace_loss(&mut g, a, y).unwrap();
            scalar(&g, l)
        });
        assert_abs_diff_eq!(scalar(&g, h1), parts.iter().sum::<f64>(), epsilon = 1e-12);
    }

    #[test]
    fn identical_views_have_no_conflict() {
        let mut g = Graph::new();
        let a = consts(&mut g, &[vec![5.0, 1.0, 2.0]]);
        let con = con_loss(&mut g, &[a, a, a]).unwrap();
        assert_eq!(scalar(&g, con), 0.0);
        let one = con_loss(&mut g, &[a]).unwrap();
        assert_eq!(scalar(&g, one), 0.0);
    }

    #[test]
    fn conflict_rows_match_reference_example() {
        let mut g = Graph::new();
        // e = (8, 0) and (0, 8): b = (0.8, 0), u = 0.2 and mirrored
        let a = consts(&mut g, &[vec![9.0, 1.0]]);
        let b = consts(&mut g, &[vec![1.0, 9.0]]);
        let c = conflict_rows(&mut g, a, b).unwrap();
        assert_abs_diff_eq!(g.value(c).item(), 0.512, epsilon = 1e-12);
        let con = con_loss(&mut g, &[a, b]).unwrap();
        assert_abs_diff_eq!(scalar(&g, con), 2.0 * 0.512, epsilon = 1e-12);
    }

    #[test]
    fn overall_recombines() {
        let mut g = Graph::new();
        let [h1, h2, com, spe] = [0.7, 1.3, 0.4, 2.5].map(|x| g.constant(Tensor::scalar(x)));
        let o = overall_loss(&mut g, h1, h2, com, spe, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(scalar(&g, o), 2.0, epsilon = 1e-15);
        let o = overall_loss(&mut g, h1, h2, com, spe, 1.0, 0.01).unwrap();
        assert_abs_diff_eq!(scalar(&g, o), 2.0 + 0.4 + 0.025, epsilon = 1e-15);
    }
}
