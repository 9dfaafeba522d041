//! Digamma, trigamma and log-gamma for positive real arguments.
//!
//! All three shift the argument upward with the recurrence until it reaches
//! [`ASYMPTOTIC_FLOOR`] and then sum the Bernoulli-number asymptotic series.
//! Callers are responsible for rejecting non-positive inputs.

use std::f64::consts::PI;

const ASYMPTOTIC_FLOOR: f64 = 10.0;

/// ψ(x) for x > 0.
pub fn digamma(mut x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut shift = 0.0;
    while x < ASYMPTOTIC_FLOOR {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // B2/2, B4/4, ... B14/14
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2
                                        * (1.0 / 132.0
                                            - inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
    shift + x.ln() - 0.5 * inv - series
}

/// ψ'(x) for x > 0.
pub fn trigamma(mut x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut shift = 0.0;
    while x < ASYMPTOTIC_FLOOR {
        shift += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv
        + 0.5 * inv2
        + inv
            * inv2
            * (1.0 / 6.0
                - inv2
                    * (1.0 / 30.0
                        - inv2
                            * (1.0 / 42.0
                                - inv2
                                    * (1.0 / 30.0
                                        - inv2
                                            * (5.0 / 66.0
                                                - inv2 * (691.0 / 2730.0 - inv2 * 7.0 / 6.0))))));
    shift + series
}

/// ln Γ(x) for x > 0.
pub fn lgamma(mut x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut product = 1.0;
    while x < ASYMPTOTIC_FLOOR {
        product *= x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv
        * (1.0 / 12.0
            - inv2
                * (1.0 / 360.0
                    - inv2
                        * (1.0 / 1260.0
                            - inv2
                                * (1.0 / 1680.0
                                    - inv2
                                        * (1.0 / 1188.0
                                            - inv2 * (691.0 / 360360.0 - inv2 / 156.0))))));
    (x - 0.5) * x.ln() - x + 0.5 * (2.0 * PI).ln() + series - product.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

    #[test]
    fn digamma_known_values() {
        assert!((digamma(1.0) + EULER_GAMMA).abs() < 1e-14);
        let half = -EULER_GAMMA - 2.0 * std::f64::consts::LN_2;
        assert!((digamma(0.5) - half).abs() < 1e-14);
        assert!((digamma(2.0) - digamma(1.0) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn recurrences_hold() {
        for &x in &[0.5, 1.0, 2.0, 10.0, 100.0] {
            assert!(
                (digamma(x + 1.0) - digamma(x) - 1.0 / x).abs() < 1e-10,
                "psi at {x}"
            );
            assert!(
                (lgamma(x + 1.0) - lgamma(x) - x.ln()).abs() < 1e-10,
                "lgamma at {x}"
            );
            assert!(
                (trigamma(x) - trigamma(x + 1.0) - 1.0 / (x * x)).abs() < 1e-10,
                "trigamma at {x}"
            );
        }
    }

    #[test]
    fn lgamma_factorials() {
        let mut fact = 1.0_f64;
        for n in 1..25 {
            fact *= n as f64;
            assert!((lgamma(n as f64 + 1.0) - fact.ln()).abs() < 1e-12 * fact.ln().max(1.0));
        }
        assert!(lgamma(1.0).abs() < 1e-14);
        assert!(lgamma(2.0).abs() < 1e-14);
        assert!((lgamma(0.5) - PI.sqrt().ln()).abs() < 1e-14);
    }

    #[test]
    fn trigamma_known_values() {
        assert!((trigamma(1.0) - PI * PI / 6.0).abs() < 1e-13);
        assert!((trigamma(0.5) - PI * PI / 2.0).abs() < 1e-13);
    }

    #[test]
    fn derivative_consistency() {
        for &x in &[0.3_f64, 1.7, 4.2, 25.0, 1e3] {
            let h = 1e-5 * x.max(1.0);
            let fd = (lgamma(x + h) - lgamma(x - h)) / (2.0 * h);
            assert!((fd - digamma(x)).abs() < 1e-7 * digamma(x).abs().max(1.0));
            let fd = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
            assert!((fd - trigamma(x)).abs() < 1e-6 * trigamma(x).abs().max(1.0));
        }
    }
}
