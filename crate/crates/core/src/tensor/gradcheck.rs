use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Result, Tape, Tensor, TensorError, Var};

pub const DEFAULT_EPS: f64 = 1e-4;

/// Max relative error between the tape gradient and a central difference,
/// over every coordinate of every input.
///
/// Non-scalar outputs are reduced with a fixed random projection so that
/// every output element contributes. The error at a coordinate is
/// `|analytic - numeric| / max(1, |numeric|)`.
pub fn gradient_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    gradient_check_sampled(f, inputs, eps, usize::MAX, 0)
}

/// Like [`gradient_check`] but probes at most `max_coords` randomly chosen
/// coordinates per input.
pub fn gradient_check_sampled<F>(
    f: F,
    inputs: &[Tensor<f64>],
    eps: f64,
    max_coords: usize,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let run = |vals: &[Tensor<f64>]| -> Result<(Tape<f64>, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars = vals
            .iter()
            .map(|t| tape.leaf(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };

    let (tape, vars, out) = run(inputs)?;
    let out_shape = tape.value(out).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9 ^ seed);
    let projection = Tensor::from_fn(&out_shape, |_| rng.gen_range(-1.0..1.0));
    let grads = tape.backward_with(out, projection.clone())?;

    let objective = |vals: &[Tensor<f64>]| -> Result<f64> {
        let (tape, _, out) = run(vals)?;
        let y = tape.value(out);
        if !y.is_finite() {
            return Err(TensorError::NonFinite("gradient_check"));
        }
        Ok(y.data().iter().zip(projection.data()).map(|(a, b)| a * b).sum())
    };

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let n = inputs[k].len();
        let analytic = grads.get(*var).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        let coords: Vec<usize> = if n <= max_coords {
            (0..n).collect()
        } else {
            sample(&mut rng, n, max_coords).into_vec()
        };
        for i in coords {
            let orig = probe[k].data()[i];
            probe[k].data_mut()[i] = orig + eps;
            let plus = objective(&probe)?;
            probe[k].data_mut()[i] = orig - eps;
            let minus = objective(&probe)?;
            probe[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = (analytic.data()[i] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_op_is_exact() {
        let a = Tensor::from_fn(&[3, 2], |i| i as f64 * 0.3 - 1.0);
        let b = Tensor::from_fn(&[3, 2], |i| 0.7 - i as f64);
        let err = gradient_check(|t, v| t.add(v[0], v[1]), &[a, b], DEFAULT_EPS).unwrap();
        assert!(err < 1e-10, "{err}");
    }
}
