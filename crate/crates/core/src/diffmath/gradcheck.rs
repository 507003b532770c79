//! Central finite-difference verification of analytic gradients.

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamSet};
use super::tensor::Tensor;
use crate::error::Result;

/// Finite-difference step used throughout the test-suite. With the
/// five-point stencil the truncation error is `O(h⁴)`, so a step this large
/// keeps the rounding error of `L(p ± h)` small.
pub const FD_STEP: f64 = 1e-4;

/// Magnitudes below this are compared absolutely rather than relatively.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub set: String,
    pub param: String,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub entries: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        !self.entries.is_empty()
            && self
                .entries
                .iter()
                .all(|e| e.max_rel_error.is_finite() && e.max_rel_error < self.tolerance)
    }

    pub fn worst(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_error)
            .fold(0.0, f64::max)
    }
}

/// `|a − n| / max(|a|, |n|, REL_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn eval_loss<F>(sets: &[ParamSet], f: &F) -> Result<f64>
where
    F: for<'a> Fn(&mut Graph<'a>, &'a [ParamSet]) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, sets)?;
    Ok(g.value(loss).item())
}

/// Analytic gradients for every tensor of every set, in set/param order.
pub fn analytic_gradients<F>(sets: &[ParamSet], f: &F) -> Result<Vec<Vec<Tensor>>>
where
    F: for<'a> Fn(&mut Graph<'a>, &'a [ParamSet]) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, sets)?;
    let grads = g.backward(loss)?;
    Ok(sets
        .iter()
        .map(|s| {
            s.ids()
                .map(|id| {
                    grads
                        .param(s.name(), id)
                        .cloned()
                        .unwrap_or_else(|| Tensor::zeros(s.get(id).shape()))
                })
                .collect()
        })
        .collect())
}

/// Five-point central differences
/// `(−L(p + 2h) + 8L(p + h) − 8L(p − h) + L(p − 2h)) / 12h` for every scalar
/// parameter.
pub fn numeric_gradients<F>(sets: &mut [ParamSet], f: &F, step: f64) -> Result<Vec<Vec<Tensor>>>
where
    F: for<'a> Fn(&mut Graph<'a>, &'a [ParamSet]) -> Result<Var>,
{
    let mut out = Vec::with_capacity(sets.len());
    for si in 0..sets.len() {
        let ids: Vec<ParamId> = sets[si].ids().collect();
        let mut per_set = Vec::with_capacity(ids.len());
        for id in ids {
            let n = sets[si].get(id).len();
            let mut grad = Tensor::zeros(sets[si].get(id).shape());
            for k in 0..n {
                let orig = sets[si].get(id).data()[k];
                let mut at = |offset: f64| -> Result<f64> {
                    sets[si].get_mut(id).data_mut()[k] = orig + offset;
                    eval_loss(sets, f)
                };
                let (u2, u1, d1, d2) = (at(2.0 * step)?, at(step)?, at(-step)?, at(-2.0 * step)?);
                sets[si].get_mut(id).data_mut()[k] = orig;
                grad.data_mut()[k] = (-u2 + 8.0 * u1 - 8.0 * d1 + d2) / (12.0 * step);
            }
            per_set.push(grad);
        }
        out.push(per_set);
    }
    Ok(out)
}

pub fn compare(
    sets: &[ParamSet],
    analytic: &[Vec<Tensor>],
    numeric: &[Vec<Tensor>],
    tolerance: f64,
) -> GradCheckReport {
    let mut entries = Vec::new();
    for (si, set) in sets.iter().enumerate() {
        for id in set.ids() {
            let a = &analytic[si][id.0];
            let n = &numeric[si][id.0];
            let max_rel_error = a
                .data()
                .iter()
                .zip(n.data())
                .map(|(x, y)| relative_error(*x, *y))
                .fold(0.0, f64::max);
            entries.push(ParamCheck {
                set: set.name().to_string(),
                param: set.param_name(id).to_string(),
                max_rel_error,
            });
        }
    }
    GradCheckReport { tolerance, entries }
}

/// Checks the gradient of the scalar built by `f` with respect to every
/// tensor in `sets`. Inputs whose gradient should be checked can be
/// supplied as an extra set.
pub fn grad_check<F>(sets: &mut [ParamSet], f: F, tolerance: f64) -> Result<GradCheckReport>
where
    F: for<'a> Fn(&mut Graph<'a>, &'a [ParamSet]) -> Result<Var>,
{
    let analytic = analytic_gradients(sets, &f)?;
    let numeric = numeric_gradients(sets, &f, FD_STEP)?;
    Ok(compare(sets, &analytic, &numeric, tolerance))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_set() -> ParamSet {
        let mut ps = ParamSet::new("q");
        ps.add("x", Tensor::row(&[0.3, -1.1, 2.0])).unwrap();
        ps
    }

    fn cubic<'a>(g: &mut Graph<'a>, sets: &'a [ParamSet]) -> Result<Var> {
        let x = g.param(&sets[0], ParamId(0));
        let sq = g.square(x);
        let cube = g.mul(sq, x);
        Ok(g.sum(cube))
    }

    #[test]
    fn cubic_passes() {
        let mut sets = vec![quad_set()];
        let report = grad_check(&mut sets, cubic, 1e-4).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn corrupted_gradient_fails() {
        let mut sets = vec![quad_set()];
        let mut analytic = analytic_gradients(&sets, &cubic).unwrap();
        let numeric = numeric_gradients(&mut sets, &cubic, FD_STEP).unwrap();
        analytic[0][0].data_mut()[1] *= 1.01;
        let report = compare(&sets, &analytic, &numeric, 1e-4);
        assert!(!report.passed());
    }
}
