use crate::diffcore::graph::{Graph, Var};
use crate::diffcore::tensor::Tensor;
use crate::error::{Error, Result};

/// Denominator floor for relative errors, so gradients that are zero up to
/// finite-difference round-off do not register as failures.
pub const RELATIVE_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub input: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let root = f(&mut g, &vars)?;
    Ok(g.value(root).item())
}

/// Compares reverse-mode adjoints of `f` against central differences
/// `(f(x+h) - f(x-h)) / 2h`, entry by entry, for every input tensor.
pub fn grad_check<F>(f: F, inputs: &[Tensor], h: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let root = f(&mut g, &vars)?;
    if g.shape(root) != [1, 1] {
        return Err(Error::contract("grad_check needs a scalar function"));
    }
    let grads = g.backward(root)?;

    let mut entries = Vec::with_capacity(inputs.len());
    let mut probe = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[k].rows(), inputs[k].cols()));
        let mut max_rel = 0.0_f64;
        let mut max_abs = 0.0_f64;
        for i in 0..inputs[k].len() {
            let x0 = inputs[k].data()[i];
            probe[k].data_mut()[i] = x0 + h;
            let up = evaluate(&f, &probe)?;
            probe[k].data_mut()[i] = x0 - h;
            let down = evaluate(&f, &probe)?;
            probe[k].data_mut()[i] = x0;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[i];
            max_rel = max_rel.max(relative_error(a, numeric));
            max_abs = max_abs.max((a - numeric).abs());
        }
        entries.push(GradCheckEntry {
            input: k,
            max_rel_error: max_rel,
            max_abs_error: max_abs,
        });
    }
    Ok(GradCheckReport { entries, tolerance })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_sum_is_exact() {
        let x = Tensor::row(&[0.3, -1.2, 4.0]);
        let report = grad_check(
            |g, v| {
                let sq = g.mul(v[0], v[0])?;
                Ok(g.sum(sq))
            },
            &[x],
            1e-5,
            1e-8,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn detects_wrong_gradient() {
        // detach hides the dependency from reverse mode but not from the
        // finite difference, so the check must fail.
        let x = Tensor::row(&[1.5]);
        let report = grad_check(
            |g, v| {
                let d = g.detach(v[0]);
                let y = g.mul(d, v[0])?;
                Ok(g.sum(y))
            },
            &[x],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(!report.passed());
    }
}
