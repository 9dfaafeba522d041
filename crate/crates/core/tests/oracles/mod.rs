//! Slow reference implementations for tests. Nothing here calls into the
//! crate's graph, loss, or special-function code.
#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

/// Rows of Dirichlet parameters, one `Vec` per sample.
pub type Batch = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub case: String,
    pub reference: f64,
    pub fast: f64,
    pub abs_error: f64,
    pub rel_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl OracleReport {
    /// Passes when the absolute error is within `tolerance`.
    pub fn new(case: impl Into<String>, reference: f64, fast: f64, tolerance: f64) -> Self {
        let abs_error = (reference - fast).abs();
        let rel_error = abs_error / reference.abs().max(f64::MIN_POSITIVE);
        Self {
            case: case.into(),
            reference,
            fast,
            abs_error,
            rel_error,
            tolerance,
            pass: abs_error <= tolerance,
        }
    }
}

/// Compensated (Neumaier) running sum.
#[derive(Default)]
struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

const SHIFT: f64 = 20.0;

/// Digamma by upward recurrence to `x >= 20` and a seven-term asymptotic tail.
pub fn reference_digamma(x: f64) -> f64 {
    assert!(x > 0.0, "reference digamma needs x > 0");
    let mut acc = Compensated::default();
    let mut z = x;
    while z < SHIFT {
        acc.add(-1.0 / z);
        z += 1.0;
    }
    let w = 1.0 / (z * z);
    let tail = w
        * (1.0 / 12.0
            - w * (1.0 / 120.0
                - w * (1.0 / 252.0
                    - w * (1.0 / 240.0 - w * (1.0 / 132.0 - w * (691.0 / 32760.0 - w / 12.0))))));
    acc.add(z.ln());
    acc.add(-0.5 / z);
    acc.add(-tail);
    acc.value()
}

/// Log-gamma by the same shift and a Stirling series.
pub fn reference_lgamma(x: f64) -> f64 {
    assert!(x > 0.0, "reference lgamma needs x > 0");
    let mut acc = Compensated::default();
    let mut z = x;
    while z < SHIFT {
        acc.add(-z.ln());
        z += 1.0;
    }
    let r = 1.0 / z;
    let w = r * r;
    let series = r
        * (1.0 / 12.0
            - w * (1.0 / 360.0
                - w * (1.0 / 1260.0
                    - w * (1.0 / 1680.0
                        - w * (1.0 / 1188.0 - w * (691.0 / 360360.0 - w / 156.0))))));
    acc.add((z - 0.5) * z.ln());
    acc.add(-z);
    acc.add(0.5 * (2.0 * std::f64::consts::PI).ln());
    acc.add(series);
    acc.value()
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut n = 0usize;
    let mut s = Compensated::default();
    for x in xs {
        s.add(x);
        n += 1;
    }
    s.value() / n as f64
}

/// Expected cross-entropy, one row at a time.
pub fn naive_ace(alpha: &Batch, y: &[usize]) -> f64 {
    let mut rows = Vec::new();
    for (a, &label) in alpha.iter().zip(y) {
        let mut strength = 0.0;
        for &x in a {
            strength += x;
        }
        rows.push(reference_digamma(strength) - reference_digamma(a[label]));
    }
    mean(rows)
}

/// KL from `Dir(alpha_tilde)` to the uniform Dirichlet, `alpha_tilde` keeping
/// only the non-target entries of `alpha`.
pub fn naive_kl(alpha: &Batch, y: &[usize]) -> f64 {
    let mut rows = Vec::new();
    for (a, &label) in alpha.iter().zip(y) {
        let q = a.len();
        let mut tilde = vec![0.0; q];
        for k in 0..q {
            tilde[k] = if k == label { 1.0 } else { a[k] };
        }
        let mut strength = 0.0;
        for &t in &tilde {
            strength += t;
        }
        let mut kl = reference_lgamma(strength) - reference_lgamma(q as f64);
        for &t in &tilde {
            kl -= reference_lgamma(t);
        }
        for &t in &tilde {
            kl += (t - 1.0) * (reference_digamma(t) - reference_digamma(strength));
        }
        rows.push(kl);
    }
    mean(rows)
}

pub fn naive_acc(alpha: &Batch, y: &[usize], lambda: f64) -> f64 {
    naive_ace(alpha, y) + lambda * naive_kl(alpha, y)
}

/// Conflict between two Dirichlet rows with uniform base rates.
pub fn naive_conflict(a: &[f64], b: &[f64]) -> f64 {
    let q = a.len() as f64;
    let sa: f64 = a.iter().sum();
    let sb: f64 = b.iter().sum();
    let (ua, ub) = (q / sa, q / sb);
    let mut distance = 0.0;
    for k in 0..a.len() {
        let pa = (a[k] - 1.0) / sa + ua / q;
        let pb = (b[k] - 1.0) / sb + ub / q;
        distance += (pa - pb).abs();
    }
    0.5 * distance * (1.0 - ua) * (1.0 - ub)
}

fn batch_conflict(a: &Batch, b: &Batch) -> f64 {
    mean(a.iter().zip(b).map(|(x, y)| naive_conflict(x, y)))
}

/// Intra-view objective with fused, common, and per-view specific parameters.
pub fn naive_h1(
    fused: &[Batch],
    common: &Batch,
    specific: &[Batch],
    y: &[usize],
    gamma: f64,
) -> f64 {
    let v = fused.len();
    let mut total = 0.0;
    for i in 0..v {
        total += naive_ace(&fused[i], y) + naive_ace(common, y) + naive_ace(&specific[i], y);
        total += gamma * batch_conflict(common, &specific[i]);
    }
    total / v as f64
}

/// Pairwise conflict over ordered view pairs, scaled by `1/(v-1)`.
pub fn naive_con(fused: &[Batch]) -> f64 {
    let v = fused.len();
    if v < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for p in 0..v {
        for q in 0..v {
            if p != q {
                total += batch_conflict(&fused[p], &fused[q]);
            }
        }
    }
    total / (v - 1) as f64
}

/// Inter-view objective.
pub fn naive_h2(
    joint: &Batch,
    attended: &[Batch],
    fused: &[Batch],
    y: &[usize],
    lambda: f64,
    gamma: f64,
) -> f64 {
    let mut total = naive_acc(joint, y, lambda);
    for a in attended {
        total += naive_acc(a, y, lambda);
    }
    total + gamma * naive_con(fused)
}

/// Monte Carlo estimate of `KL[Dir(alpha) || Dir(1)]` and its standard error.
pub fn mc_dirichlet_kl(alpha: &[f64], samples: usize, seed: u64) -> (f64, f64) {
    use statrs::function::gamma::ln_gamma;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = alpha.len();
    let gammas: Vec<Gamma<f64>> = alpha.iter().map(|&a| Gamma::new(a, 1.0).unwrap()).collect();
    let strength: f64 = alpha.iter().sum();
    let log_norm =
        ln_gamma(strength) - alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>() - ln_gamma(q as f64);
    let mut draws = Vec::with_capacity(samples);
    let mut p = vec![0.0; q];
    for _ in 0..samples {
        let mut total = 0.0;
        for (pk, g) in p.iter_mut().zip(&gammas) {
            *pk = g.sample(&mut rng);
            total += *pk;
        }
        let mut log_ratio = log_norm;
        for (pk, &a) in p.iter().zip(alpha) {
            if a != 1.0 {
                log_ratio += (a - 1.0) * (pk / total).ln();
            }
        }
        draws.push(log_ratio);
    }
    let m = mean(draws.iter().copied());
    let var = draws.iter().map(|d| (d - m) * (d - m)).sum::<f64>() / (samples - 1) as f64;
    (m, (var / samples as f64).sqrt())
}

/// Element-wise mean of evidence vectors.
pub fn evidence_mean(evidence: &[Vec<f64>]) -> Vec<f64> {
    let q = evidence[0].len();
    (0..q)
        .map(|k| mean(evidence.iter().map(|e| e[k])))
        .collect()
}

/// `u = q / (sum(e) + q)` for an evidence vector.
pub fn evidence_uncertainty(e: &[f64]) -> f64 {
    let q = e.len() as f64;
    q / (e.iter().sum::<f64>() + q)
}

/// Central differences of `f` at `x`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}
