//! Central finite-difference verification of analytic gradients.

use super::{Graph, Value};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Finite-difference step `h` in `(f(x+h) - f(x-h)) / 2h`.
    pub step: f64,
    /// Maximum allowed relative error.
    pub tolerance: f64,
    /// Relative errors are taken against `max(|analytic|, |numeric|, scale_floor)`
    /// so entries with vanishing gradient are compared absolutely.
    pub scale_floor: f64,
    /// Check at most this many entries per parameter (evenly strided); all when `None`.
    pub max_entries: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-5,
            scale_floor: 1e-3,
            max_entries: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamReport {
    pub index: usize,
    pub shape: Vec<usize>,
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Entry with the largest relative error.
    pub worst_entry: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamReport>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }
}

fn evaluate<F>(f: &F, params: &[Tensor<f64>]) -> Result<(f64, Graph<f64>, Vec<Value>, Value)>
where
    F: Fn(&mut Graph<f64>, &[Value]) -> Result<Value>,
{
    let mut g = Graph::new();
    let vars: Vec<Value> = params.iter().map(|p| g.variable(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    let t = g.data(out);
    if t.numel() != 1 {
        return Err(Error::shape("grad_check output", t.shape(), &[1]));
    }
    let v = t.data()[0];
    Ok((v, g, vars, out))
}

/// Compare reverse-mode gradients of a scalar function against central
/// differences, parameter by parameter. Runs in 64-bit.
pub fn grad_check<F>(f: F, params: &[Tensor<f64>], config: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Value]) -> Result<Value>,
{
    let (v0, mut g, vars, out) = evaluate(&f, params)?;
    if !v0.is_finite() {
        return Err(Error::NonFinite("unperturbed forward value".into()));
    }
    g.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| g.grad(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();

    let mut reports = Vec::with_capacity(params.len());
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        let n = param.numel();
        let stride = match config.max_entries {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        let mut report = ParamReport {
            index: pi,
            shape: param.shape().to_vec(),
            checked: 0,
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            worst_entry: 0,
        };
        for e in (0..n).step_by(stride) {
            let orig = param.data()[e];
            let mut side = |delta: f64| -> Result<f64> {
                work[pi].data_mut()[e] = orig + delta;
                let (v, _, _, _) = evaluate(&f, &work)?;
                work[pi].data_mut()[e] = orig;
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "forward value with parameter {pi} entry {e} perturbed by {delta:+e}"
                    )));
                }
                Ok(v)
            };
            let plus = side(config.step)?;
            let minus = side(-config.step)?;
            let numeric = (plus - minus) / (2.0 * config.step);
            let a = analytic[pi].data()[e];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(config.scale_floor);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_entry = e;
            }
            report.max_abs_error = report.max_abs_error.max(abs);
            report.checked += 1;
        }
        reports.push(report);
    }
    Ok(GradCheckReport {
        params: reports,
        tolerance: config.tolerance,
    })
}
