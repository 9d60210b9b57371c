use crate::error::{Error, Result};

use super::tape::{NodeId, Tape};
use super::tensor::Tensor;

/// `|analytic − numeric| / max(1, |analytic|, |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn evaluate<F>(f: &F, x: &Tensor<f64>) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, NodeId) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let leaf = tape.leaf(x.clone());
    let out = f(&mut tape, leaf)?;
    let v = tape
        .value(out)
        .item()
        .ok_or_else(|| crate::error::invalid("gradient check needs a scalar function"))?;
    if !v.is_finite() {
        return Err(Error::NonFinite("gradient check objective".into()));
    }
    Ok(v)
}

/// Central-difference check of `f` at `x` on every coordinate. The step for
/// coordinate `i` is `step · (1 + |x_i|)`. Returns the largest
/// [`relative_error`].
pub fn grad_check<F>(f: F, x: &Tensor<f64>, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, NodeId) -> Result<NodeId>,
{
    let coords: Vec<usize> = (0..x.numel()).collect();
    grad_check_coords(f, x, step, &coords)
}

/// [`grad_check`] restricted to the listed flat coordinates.
pub fn grad_check_coords<F>(f: F, x: &Tensor<f64>, step: f64, coords: &[usize]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, NodeId) -> Result<NodeId>,
{
    grad_check_on(Tape::new(), f, x, step, coords)
}

/// [`grad_check_coords`] with the analytic gradient taken from `tape`, which
/// must be empty. Numeric evaluations always use fresh tapes.
pub fn grad_check_on<F>(mut tape: Tape<f64>, f: F, x: &Tensor<f64>, step: f64, coords: &[usize]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, NodeId) -> Result<NodeId>,
{
    let leaf = tape.leaf(x.clone());
    let out = f(&mut tape, leaf)?;
    let analytic = tape.backward(out)?.wrt(leaf);
    let mut worst = 0f64;
    for &i in coords {
        let h = step * (1.0 + x.data()[i].abs());
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (evaluate(&f, &plus)? - evaluate(&f, &minus)?) / (2.0 * h);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_quadratic() {
        let x = Tensor::new(vec![4], vec![0.3, -1.2, 2.0, 0.0]).unwrap();
        let err = grad_check(
            |t, x| {
                let sq = t.mul(x, x)?;
                let s = t.sum(sq)?;
                t.scale(s, 0.5)
            },
            &x,
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-8, "{err}");
    }

    #[test]
    fn non_finite_objective_is_error() {
        let x = Tensor::new(vec![1], vec![1e-300]).unwrap();
        let r = grad_check(
            |t, x| {
                let l = t.ln(x)?;
                let l = t.ln(l)?;
                t.sum(l)
            },
            &x,
            1e-6,
        );
        assert!(r.is_err());
    }
}
