//! Central-difference verification of analytic gradients.

use rayon::prelude::*;

use super::{Graph, ParamSet, TensorError, Var};

/// Denominator floor for the relative error, so that entries whose true
/// gradient is numerically zero are judged on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub elements: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_error < self.tol)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

fn evaluate<F>(f: &F, params: &ParamSet<f64>) -> Result<(Graph<f64>, Var, Vec<Var>), TensorError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let mut graph = Graph::new();
    let vars: Vec<Var> = params.iter().map(|(_, t)| graph.param(t.clone())).collect();
    let loss = f(&mut graph, &vars)?;
    Ok((graph, loss, vars))
}

/// Compare the analytic gradient of the scalar `f` against central
/// differences with step `h`, for every element of every parameter.
///
/// `f` receives one graph leaf per entry of `params`, in order, and must
/// return a scalar. It is evaluated twice up front; differing results fail
/// with `NonDeterministicFunction`.
pub fn grad_check<F>(
    f: F,
    params: &ParamSet<f64>,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, TensorError> + Sync,
{
    check(f, params, h, tol, |_, len| (0..len).collect())
}

/// Like [`grad_check`] but only differentiates up to `per_param` evenly
/// spaced elements of each parameter, for models too large to check fully.
pub fn grad_check_sampled<F>(
    f: F,
    params: &ParamSet<f64>,
    h: f64,
    tol: f64,
    per_param: usize,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, TensorError> + Sync,
{
    check(f, params, h, tol, |_, len| {
        let take = per_param.clamp(1, len.max(1));
        let mut idx: Vec<usize> = (0..take).map(|i| i * len / take).collect();
        idx.dedup();
        idx
    })
}

fn check<F, S>(
    f: F,
    params: &ParamSet<f64>,
    h: f64,
    tol: f64,
    select: S,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, TensorError> + Sync,
    S: Fn(usize, usize) -> Vec<usize>,
{
    let (graph, loss, vars) = evaluate(&f, params)?;
    let first = graph.value(loss).data()[0];
    let (again, loss2, _) = evaluate(&f, params)?;
    let second = again.value(loss2).data()[0];
    if first.to_bits() != second.to_bits() {
        return Err(TensorError::NonDeterministicFunction { first, second });
    }
    let grads = graph.backward(loss);

    let scalar = |p: &ParamSet<f64>| -> Result<f64, TensorError> {
        let (g, l, _) = evaluate(&f, p)?;
        Ok(g.value(l).data()[0])
    };

    let mut report = Vec::with_capacity(params.len());
    for (pi, &var) in vars.iter().enumerate() {
        let len = params.tensor(pi).len();
        let zeros = vec![0.0; len];
        let analytic = grads.get(var).unwrap_or(&zeros);
        let elements = select(pi, len);
        let numeric: Vec<f64> = elements
            .par_iter()
            .map(|&e| e)
            .map(|e| {
                let mut plus = params.clone();
                plus.tensor_mut(pi).data_mut()[e] += h;
                let mut minus = params.clone();
                minus.tensor_mut(pi).data_mut()[e] -= h;
                Ok((scalar(&plus)? - scalar(&minus)?) / (2.0 * h))
            })
            .collect::<Result<_, TensorError>>()?;
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for (&e, n) in elements.iter().zip(&numeric) {
            let a = &analytic[e];
            let abs = (a - n).abs();
            let denom = a.abs().max(n.abs()).max(REL_ERROR_FLOOR);
            max_abs = max_abs.max(abs);
            max_rel = max_rel.max(abs / denom);
        }
        report.push(ParamCheck {
            name: params.name(pi).to_string(),
            elements: elements.len(),
            max_rel_error: max_rel,
            max_abs_error: max_abs,
        });
    }
    Ok(GradCheckReport {
        params: report,
        tol,
    })
}
