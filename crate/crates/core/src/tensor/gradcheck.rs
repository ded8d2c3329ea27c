//! Central finite-difference verification of tape gradients.

use super::tape::{Tape, Var};
use super::value::Tensor;
use crate::error::{Error, Result};

/// Magnitude below which errors are measured absolutely rather than
/// relative to the gradient.
pub const RELATIVE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, flat element)` with the largest error.
    pub worst: (usize, usize),
    pub checked: usize,
    pub tol: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares the tape gradient of scalar `f` at `x` against
/// `(f(x + h·e) − f(x − h·e)) / 2h` for every element.
pub fn finite_difference_check<F>(f: F, x: &Tensor, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    check_gradients(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), h, tol)
}

/// Multi-input form of [`finite_difference_check`]; every element of every
/// input is perturbed.
pub fn check_gradients<F>(f: F, inputs: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if h <= 0.0 || tol <= 0.0 {
        return Err(Error::config("finite difference step and tolerance must be positive"));
    }
    let eval = |vals: &[Tensor], grad: bool| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone(), grad)).collect();
        let out = f(&mut tape, &vars)?;
        if tape.is_stochastic() {
            return Err(Error::config(
                "finite difference check needs a deterministic function (stochastic op recorded)",
            ));
        }
        if tape.value(out).numel() != 1 {
            return Err(Error::shape("finite difference check needs a scalar function"));
        }
        Ok((tape, vars, out))
    };

    let (mut tape, vars, out) = eval(inputs, true)?;
    let base = tape.value(out).item();
    tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, x)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape())))
        .collect();
    let (again, _, out2) = eval(inputs, false)?;
    if again.value(out2).item().to_bits() != base.to_bits() {
        return Err(Error::config(
            "finite difference check needs a deterministic function (repeat evaluation differs)",
        ));
    }

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut worst = (0, 0);
    let mut max_err = 0.0f64;
    let mut checked = 0;
    for (which, grad) in analytic.iter().enumerate() {
        for k in 0..inputs[which].numel() {
            let orig = inputs[which].data()[k];
            work[which].data_mut()[k] = orig + h;
            let (tp, _, op) = eval(&work, false)?;
            let fp = tp.value(op).item();
            work[which].data_mut()[k] = orig - h;
            let (tm, _, om) = eval(&work, false)?;
            let fm = tm.value(om).item();
            work[which].data_mut()[k] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let err = relative_error(grad.data()[k], numeric);
            if err > max_err || !err.is_finite() {
                max_err = if err.is_finite() { err } else { f64::INFINITY };
                worst = (which, k);
            }
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_err,
        worst,
        checked,
        tol,
        passed: max_err <= tol,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn sum_has_zero_error() {
        let x = Tensor::new(&[2, 3], vec![0.1, -0.2, 0.3, 1.5, 2.0, -3.0]).unwrap();
        let r = finite_difference_check(|t, v| Ok(t.sum(v)), &x, 1e-4, 1e-4).unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
        assert!(r.passed);
    }

    #[test]
    fn softmax_pick_passes() {
        let x = Tensor::new(&[1, 4], vec![0.3, -1.2, 2.0, 0.7]).unwrap();
        let r = finite_difference_check(
            |t, v| {
                let s = t.softmax(v, 1)?;
                let p = t.narrow(s, 1, 2, 1)?;
                Ok(t.sum(p))
            },
            &x,
            1e-4,
            1e-4,
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn stochastic_function_is_rejected() {
        let x = Tensor::full(&[8], 1.0);
        let err = finite_difference_check(
            |t, v| {
                let mut rng = ChaCha8Rng::seed_from_u64(1);
                let d = t.dropout(v, 0.5, &mut rng, true)?;
                Ok(t.sum(d))
            },
            &x,
            1e-4,
            1e-4,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
