//! Central finite-difference gradient checking.

use super::graph::{Graph, Var};
use super::params::ParamSet;
use crate::error::{Error, Result};

/// Denominator floor for relative errors.
const REL_FLOOR: f64 = 1e-8;

/// `|a − n| / max(|a|, |n|, 1e−8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Smallest derivative a central difference can resolve: a few ulps of the
/// evaluated values divided by the step width.
fn roundoff_resolution(up: f64, down: f64, epsilon: f64) -> f64 {
    4.0 * f64::EPSILON * up.abs().max(down.abs()) / (2.0 * epsilon)
}

/// Relative error after discounting the finite-difference resolution, so an
/// exactly-zero analytic entry against one ulp of numeric noise scores 0.
fn resolved_relative_error(analytic: f64, numeric: f64, resolution: f64) -> f64 {
    let diff = ((analytic - numeric).abs() - resolution).max(0.0);
    diff / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the tape gradient of the scalar built by `build` against central
/// differences for every entry of every parameter in `params`, returning the
/// worst relative error.
///
/// `build` receives a fresh graph with the parameters bound (in order) and
/// must return the scalar loss node.
pub fn finite_difference_check<F>(params: &ParamSet, epsilon: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(Error::invalid(format!(
            "epsilon must lie in (0, 1e-2], got {epsilon}"
        )));
    }
    let mut graph = Graph::new();
    let vars = params.bind(&mut graph);
    let loss = build(&mut graph, &vars)?;
    let grads = graph.backward(loss)?;
    let analytic = params.collect_grads(&grads, &vars);

    let eval = |p: &ParamSet| -> Result<f64> {
        let mut g = Graph::new();
        let vars = p.bind(&mut g);
        let l = build(&mut g, &vars)?;
        Ok(g.scalar(l))
    };

    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for (idx, grad) in analytic.iter().enumerate() {
        for k in 0..grad.len() {
            let orig = probe.get(idx).data()[k];
            probe.get_mut(idx).data_mut()[k] = orig + epsilon;
            let up = eval(&probe)?;
            probe.get_mut(idx).data_mut()[k] = orig - epsilon;
            let down = eval(&probe)?;
            probe.get_mut(idx).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            let resolution = roundoff_resolution(up, down, epsilon);
            worst = worst.max(resolved_relative_error(grad.data()[k], numeric, resolution));
        }
    }
    Ok(worst)
}

/// Finite-difference check for a plain function returning `(value, grad)`.
pub fn check_value_and_grad<F>(x: &[f64], epsilon: f64, f: F) -> f64
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (_, grad) = f(x);
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for k in 0..x.len() {
        probe[k] = x[k] + epsilon;
        let up = f(&probe).0;
        probe[k] = x[k] - epsilon;
        let down = f(&probe).0;
        probe[k] = x[k];
        let numeric = (up - down) / (2.0 * epsilon);
        let resolution = roundoff_resolution(up, down, epsilon);
        worst = worst.max(resolved_relative_error(grad[k], numeric, resolution));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn params() -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("x", Tensor::row(&[0.3, -1.2, 2.0]).unwrap());
        p
    }

    #[test]
    fn correct_gradient_passes() {
        let worst = finite_difference_check(&params(), 1e-6, |g, v| {
            let sq = g.square(v[0])?;
            g.sum(sq)
        })
        .unwrap();
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn wrong_gradient_is_caught() {
        // value sum(x^2) but gradient claimed as x instead of 2x
        let worst = finite_difference_check(&params(), 1e-6, |g, v| {
            let x = g.value(v[0]).clone();
            let value = x.data().iter().map(|a| a * a).sum();
            g.external(v[0], value, x)
        })
        .unwrap();
        assert!(worst > 0.4, "{worst}");
        let plain = check_value_and_grad(&[1.0, 2.0], 1e-6, |x| (x[0] * x[1], vec![x[1], 0.0]));
        assert!(plain > 0.9, "{plain}");
    }

    #[test]
    fn epsilon_validated() {
        assert!(finite_difference_check(&params(), 0.0, |g, v| g.sum(v[0])).is_err());
    }
}
