use super::{Tape, Tensor, TensorError, Var};

/// Compares the tape gradient of a scalar function against central
/// differences and returns the largest relative error over all coordinates.
///
/// Relative error is `|a - n| / max(1, |a|, |n|)`.
pub fn grad_check<F, E>(f: F, x: &Tensor, eps: f64) -> Result<f64, E>
where
    F: Fn(&Tape, Var) -> Result<Var, E>,
    E: From<TensorError>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(TensorError::InvalidArgument(format!("eps {eps} outside [1e-7, 1e-3]")).into());
    }
    let eval = |input: &Tensor| -> Result<f64, E> {
        let tape = Tape::new();
        let v = tape.constant(input.clone());
        let out = f(&tape, v)?;
        let value = tape.value(out);
        if value.shape() != [1, 1] {
            return Err(TensorError::NonScalarLoss(value.shape().to_vec()).into());
        }
        Ok(value.item())
    };

    let tape = Tape::new();
    let v = tape.param(x.clone());
    let out = f(&tape, v)?;
    tape.backward(out)?;
    let first = tape.value(out).item();
    let second = eval(x)?;
    if first.to_bits() != second.to_bits() {
        return Err(TensorError::NondeterministicFunction { first, second }.into());
    }
    let analytic = tape.grad(v).unwrap_or_else(|| x.map(|_| 0.0));

    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for k in 0..x.len() {
        let orig = x.data()[k];
        probe.data_mut()[k] = orig + eps;
        let up = eval(&probe)?;
        probe.data_mut()[k] = orig - eps;
        let down = eval(&probe)?;
        probe.data_mut()[k] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic.data()[k];
        let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn tanh_gradient_at_half() {
        let tape = Tape::new();
        let x = tape.param(Tensor::scalar(0.5));
        let y = tape.tanh(x);
        tape.backward(y).unwrap();
        assert!((tape.grad(x).unwrap().item() - 0.786_448).abs() < 1e-6);
        let err = grad_check(
            |t, v| Ok::<_, TensorError>(t.tanh(v)),
            &Tensor::scalar(0.5),
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-8);
    }

    #[test]
    fn rejects_bad_eps() {
        let r = grad_check(
            |t, v| Ok::<_, TensorError>(t.sum(v)),
            &Tensor::scalar(1.0),
            0.1,
        );
        assert!(matches!(r, Err(TensorError::InvalidArgument(_))));
    }

    #[test]
    fn detects_nondeterminism() {
        let calls = Cell::new(0.0);
        let r = grad_check(
            |t, v| {
                calls.set(calls.get() + 1.0);
                Ok::<_, TensorError>(t.sum(t.scale(v, calls.get())))
            },
            &Tensor::scalar(1.0),
            1e-5,
        );
        assert!(matches!(
            r,
            Err(TensorError::NondeterministicFunction { .. })
        ));
    }
}
