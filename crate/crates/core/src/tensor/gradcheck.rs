use super::tape::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Compares tape gradients against central finite differences.
///
/// `f` records a scalar loss on a fresh tape given leaf handles for `params`.
/// Returns the maximum over every parameter element of
/// `|analytic - numeric| / max(1, |analytic|)`.
pub fn grad_check<F>(f: F, params: &[Tensor], epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::Invalid(format!("epsilon {epsilon} outside [1e-7, 1e-3]")));
    }
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars);
        let loss = tape.value(out).item();
        if loss.is_finite() {
            Ok(loss)
        } else {
            Err(Error::NonFinite(format!("loss {loss}")))
        }
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars);
    let loss = tape.value(out).item();
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss {loss}")));
    }
    let grads = tape.backward(out);

    let mut probe: Vec<Tensor> = params.to_vec();
    let mut worst = 0.0f64;
    for (p, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        for i in 0..params[p].len() {
            let orig = params[p].data[i];
            probe[p].data[i] = orig + epsilon;
            let up = eval(&probe)?;
            probe[p].data[i] = orig - epsilon;
            let down = eval(&probe)?;
            probe[p].data[i] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let err = grad_check(
            |t, v| {
                let sq = t.mul(v[0], v[0]);
                t.sum(sq)
            },
            &[Tensor::vector(vec![3.0])],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-9, "{err}");
    }

    #[test]
    fn constant_has_zero_error() {
        let err = grad_check(
            |t, v| {
                let z = t.scale(v[0], 0.0);
                let s = t.sum(z);
                t.add_scalar(s, 4.0)
            },
            &[Tensor::vector(vec![1.0, -2.0])],
            1e-5,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn rejects_out_of_range_epsilon() {
        assert!(grad_check(|t, v| t.sum(v[0]), &[Tensor::scalar(1.0)], 1e-2).is_err());
    }

    #[test]
    fn rejects_non_finite_loss() {
        let r = grad_check(
            |t, v| {
                let s = t.scale(v[0], f64::INFINITY);
                t.sum(s)
            },
            &[Tensor::scalar(1.0)],
            1e-5,
        );
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
