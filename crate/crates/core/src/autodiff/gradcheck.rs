//! Central-difference gradient verification.

use super::graph::{Graph, Var};
use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Default central-difference step.
pub const DEFAULT_EPS: f64 = 1e-6;

/// Location of a single parameter entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Coordinate {
    pub param: usize,
    pub row: usize,
    pub col: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
    pub max_rel_error: f64,
    /// Entry attaining the maximum.
    pub worst: Option<Coordinate>,
    pub entries: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Relative error used throughout the checker.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Checks the graph's backward pass for `f` at `params`.
///
/// `f` receives a fresh graph and one leaf per parameter (in order) and must
/// return a 1×1 record.
pub fn grad_check<F>(f: F, params: &[Matrix], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let leaves: Vec<Var> = params.iter().map(|p| g.leaf(p.clone())).collect();
    let loss = f(&mut g, &leaves)?;
    g.backward(loss)?;
    let analytic: Vec<Matrix> = leaves
        .iter()
        .map(|&v| g.grad(v).cloned().unwrap_or_else(|| Matrix::zeros(0, 0)))
        .collect();

    let value = |ps: &[Matrix]| -> Result<f64> {
        let mut g = Graph::new();
        let leaves: Vec<Var> = ps.iter().map(|p| g.leaf(p.clone())).collect();
        let loss = f(&mut g, &leaves)?;
        Ok(g.value(loss).item())
    };
    compare_gradients(value, &analytic, params, eps)
}

/// Compares supplied analytic gradients to central differences of `value`.
pub fn compare_gradients<V>(
    mut value: V,
    analytic: &[Matrix],
    params: &[Matrix],
    eps: f64,
) -> Result<GradCheckReport>
where
    V: FnMut(&[Matrix]) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("grad_check eps must be > 0, got {eps}")));
    }
    if analytic.len() != params.len() {
        return Err(Error::invalid("one analytic gradient per parameter is required"));
    }
    let mut work: Vec<Matrix> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        entries: 0,
    };
    for (p, grad) in analytic.iter().enumerate() {
        if grad.shape() != params[p].shape() {
            return Err(Error::shape(
                "grad_check",
                format!("gradient {:?} for parameter {:?}", grad.shape(), params[p].shape()),
            ));
        }
        let cols = params[p].cols();
        for k in 0..params[p].len() {
            let orig = params[p].as_slice()[k];
            work[p].as_mut_slice()[k] = orig + eps;
            let plus = value(&work)?;
            work[p].as_mut_slice()[k] = orig - eps;
            let minus = value(&work)?;
            work[p].as_mut_slice()[k] = orig;

            let coord = Coordinate {
                param: p,
                row: k / cols,
                col: k % cols,
            };
            let numeric = (plus - minus) / (2.0 * eps);
            if !numeric.is_finite() {
                return Err(Error::NonFiniteGradient {
                    param: coord.param,
                    row: coord.row,
                    col: coord.col,
                });
            }
            let err = relative_error(grad.as_slice()[k], numeric);
            report.entries += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some(coord);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let params = vec![
            Matrix::new(2, 3, vec![0.3, -1.2, 0.7, 1.9, -0.4, 0.05]).unwrap(),
            Matrix::column(&[1.5, -0.25]),
        ];
        let report = grad_check(
            |g, p| {
                let a = g.sum(p[0]);
                let b = g.sum(p[1]);
                g.add(a, b)
            },
            &params,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-9, "{report:?}");
        assert_eq!(report.entries, 8);
    }

    #[test]
    fn sign_flipped_gradient_is_caught() {
        let params = vec![Matrix::column(&[0.3, -0.8, 1.1])];
        let value = |ps: &[Matrix]| -> Result<f64> {
            Ok(ps[0].as_slice().iter().map(|x| super::super::graph::sigmoid(*x)).sum())
        };
        let mut g = Graph::new();
        let x = g.leaf(params[0].clone());
        let s = g.sigmoid(x);
        let l = g.sum(s);
        g.backward(l).unwrap();
        let good = g.grad(x).unwrap().clone();
        let ok = compare_gradients(value, &[good.clone()], &params, DEFAULT_EPS).unwrap();
        assert!(ok.max_rel_error < 1e-6);
        let flipped = good.map(|v| -v);
        let bad = compare_gradients(value, &[flipped], &params, DEFAULT_EPS).unwrap();
        assert!(bad.max_rel_error > 1e-2);
    }

    #[test]
    fn non_finite_numeric_gradient_is_reported() {
        let params = vec![Matrix::column(&[0.0, 1.0])];
        let value = |ps: &[Matrix]| -> Result<f64> {
            let x = ps[0].get(1, 0);
            Ok(if x > 1.0 { f64::INFINITY } else { x })
        };
        let err = compare_gradients(value, &[Matrix::zeros(2, 1)], &params, DEFAULT_EPS).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { param: 0, row: 1, col: 0 }));
    }

    #[test]
    fn rejects_bad_eps() {
        assert!(grad_check(|g, p| Ok(g.sum(p[0])), &[Matrix::zeros(1, 1)], 0.0).is_err());
    }
}
