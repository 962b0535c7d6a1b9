//! Finite-difference gradient oracle.
//!
//! The analytic gradients from a reverse sweep are compared against central
//! differences `(f(x + eps) - f(x - eps)) / (2 eps)`, element by element,
//! for every named parameter. The whole check runs in f64.

use crate::graph::{Graph, NodeId};
use crate::params::ParamSet;
use crate::{Result, TensorError};

/// Relative errors below this absolute gradient scale are measured against
/// the floor instead, so finite-difference noise on near-zero gradients
/// does not dominate the report.
const DENOM_FLOOR: f64 = 1e-3;

/// Per-parameter comparison outcome.
#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    /// max_j |analytic_j - numeric_j| / max(|analytic_j|, |numeric_j|, floor)
    pub max_rel_err: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub per_param: Vec<ParamCheck>,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }

    /// The parameter with the worst relative error, if any was checked.
    pub fn worst(&self) -> Option<&ParamCheck> {
        self.per_param
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

/// Check the analytic gradient of a scalar-valued function of `params`.
///
/// `build` constructs the loss on a fresh graph; it must be deterministic.
/// Only parameters the built graph actually registers are checked. `eps`
/// should sit in `[1e-5, 1e-3]`; central differences degrade outside it.
pub fn grad_check<F>(params: &ParamSet, eps: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamSet) -> Result<NodeId>,
{
    assert!(
        (1e-5..=1e-3).contains(&eps),
        "eps {eps} outside [1e-5, 1e-3]"
    );

    // Analytic pass.
    let mut graph = Graph::new(true);
    let loss = build(&mut graph, params)?;
    if graph.value(loss).shape() != (1, 1) {
        return Err(TensorError::InvalidShape {
            op: "grad_check",
            shape: vec![graph.value(loss).rows(), graph.value(loss).cols()],
            reason: "loss must be scalar".into(),
        });
    }
    graph.backward(loss)?;
    let analytic = graph.param_grads();
    drop(graph);

    // Numeric pass: perturb one value at a time.
    let mut work = params.clone();
    let mut per_param = Vec::with_capacity(analytic.len());
    for (name, grad) in &analytic {
        let numel = grad.numel();
        let mut worst = ParamCheck {
            name: name.clone(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic_at_worst: 0.0,
            numeric_at_worst: 0.0,
        };
        for i in 0..numel {
            let orig = work
                .get(name)
                .ok_or_else(|| TensorError::UnknownParam { name: name.clone() })?
                .data()[i];

            let f_plus = eval_at(&build, &mut work, name, i, orig + eps)?;
            let f_minus = eval_at(&build, &mut work, name, i, orig - eps)?;
            set_value(&mut work, name, i, orig);
            if !f_plus.is_finite() || !f_minus.is_finite() {
                return Err(TensorError::NonFiniteEval {
                    param: name.clone(),
                    index: i,
                });
            }

            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let a = grad.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(DENOM_FLOOR);
            if rel > worst.max_rel_err {
                worst.max_rel_err = rel;
                worst.worst_index = i;
                worst.analytic_at_worst = a;
                worst.numeric_at_worst = numeric;
            }
        }
        per_param.push(worst);
    }

    let max_rel_err = per_param.iter().map(|p| p.max_rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_param,
        max_rel_err,
    })
}

fn set_value(work: &mut ParamSet, name: &str, index: usize, value: f64) {
    let t = work.get_mut(name).expect("param disappeared");
    t.data_mut()[index] = value;
}

fn eval_at<F>(build: &F, work: &mut ParamSet, name: &str, index: usize, value: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamSet) -> Result<NodeId>,
{
    set_value(work, name, index, value);
    let mut graph = Graph::new(false);
    let loss = build(&mut graph, work)?;
    Ok(graph.value(loss).item())
}
