//! Central finite-difference gradient checking.

use crate::error::{AutodiffError, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Default finite-difference step.
pub const DEFAULT_STEP: f64 = 1e-3;

/// Denominator floor for the relative error, so that entries whose true
/// gradient is ~0 are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, flat entry)` of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub entries_checked: usize,
}

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    if !g.value(out).is_scalar() {
        return Err(AutodiffError::Usage("gradient check needs a scalar function".into()));
    }
    Ok(g.value(out).item())
}

/// Analytic gradient of a scalar function of `inputs`.
pub fn analytic_gradient<F>(inputs: &[Tensor], f: &F) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.grad(out, &vars)?;
    Ok(grads.iter().map(|&v| g.value(v).clone()).collect())
}

/// Central-difference gradient, one entry at a time.
pub fn numeric_gradient<F>(inputs: &[Tensor], h: f64, f: &F) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for k in 0..inputs.len() {
        let mut grad = Tensor::zeros(inputs[k].shape());
        for e in 0..inputs[k].numel() {
            let x0 = inputs[k].data()[e];
            work[k].data_mut()[e] = x0 + h;
            let plus = eval(f, &work)?;
            work[k].data_mut()[e] = x0 - h;
            let minus = eval(f, &work)?;
            work[k].data_mut()[e] = x0;
            grad.data_mut()[e] = (plus - minus) / (2.0 * h);
        }
        out.push(grad);
    }
    Ok(out)
}

/// Compare autodiff against central differences on every input entry.
pub fn check_gradients<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let analytic = analytic_gradient(inputs, &f)?;
    let numeric = numeric_gradient(inputs, h, &f)?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        entries_checked: 0,
    };
    for (k, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        for (e, (&av, &nv)) in a.data().iter().zip(n.data()).enumerate() {
            report.entries_checked += 1;
            let err = relative_error(av, nv);
            if err > report.max_rel_error || report.entries_checked == 1 {
                report.max_rel_error = err;
                report.worst = (k, e);
                report.analytic = av;
                report.numeric = nv;
            }
        }
    }
    Ok(report)
}
