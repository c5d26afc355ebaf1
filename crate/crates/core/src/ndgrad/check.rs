use crate::Result;

use super::{Tape, Tensor, Var};

/// Central finite-difference check of a scalar-valued function.
///
/// Returns the max over coordinates of
/// `|analytic - central| / max(1, |central|)`. NaN anywhere propagates
/// into the returned value and fails any threshold comparison.
pub fn grad_check<F>(f: F, input: &Tensor, step: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let analytic = {
        let tape = Tape::new();
        let x = tape.leaf(input.clone());
        let loss = f(&tape, x)?;
        tape.backward(loss)?;
        x.grad().expect("leaf grad populated by backward")
    };

    let eval = |t: &Tensor| -> Result<f64> {
        let tape = Tape::new();
        let x = tape.leaf(t.clone());
        Ok(f(&tape, x)?.value().item())
    };

    let mut worst: f64 = 0.0;
    for i in 0..input.len() {
        let mut hi = input.clone();
        hi.data_mut()[i] += step;
        let mut lo = input.clone();
        lo.data_mut()[i] -= step;
        let numeric = (eval(&hi)? - eval(&lo)?) / (2.0 * step);
        let err = (analytic.data()[i] - numeric).abs() / numeric.abs().max(1.0);
        // NaN-preserving max
        if err.is_nan() || worst.is_nan() {
            worst = f64::NAN;
        } else {
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_grad() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let tape = Tape::new();
        let v = tape.leaf(x);
        let loss = v.square().sum_all().unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(v.grad().unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn sum_of_squares_checks() {
        let x = Tensor::vector(vec![0.3, -1.7, 2.2]);
        let err = grad_check(|_, v| v.square().sum_all(), &x, 1e-5).unwrap();
        assert!(err < 1e-6, "err = {err}");
    }

    #[test]
    fn max_routes_to_unique_argmax() {
        let x = Tensor::vector(vec![1.0, 3.0, 2.0]);
        let tape = Tape::new();
        let v = tape.leaf(x);
        let (m, arg) = v.max_axis(0).unwrap();
        assert_eq!(arg, vec![1]);
        let loss = m.sum_all().unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(v.grad().unwrap().data(), &[0.0, 1.0, 0.0]);
    }
}
