use ndarray::Array2;

use super::{AdError, Tape, Var};

/// Absolute floor of the relative-error denominator. Central differences
/// at `eps = 1e-6` carry roughly 1e-10 of rounding noise, so entries whose
/// gradient is below this floor are compared in absolute terms.
pub const GRAD_FLOOR: f64 = 1e-6;

/// Central differences against reverse mode for every entry of every input.
/// Returns `max |numeric − analytic| / (|analytic| + GRAD_FLOOR)`.
///
/// Only valid where `f` is smooth; `abs` kinks must be avoided by the caller.
pub fn grad_check_params<F>(f: F, inputs: &[Array2<f64>], eps: f64) -> Result<f64, AdError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AdError>,
{
    let eval = |xs: &[Array2<f64>]| -> Result<f64, AdError> {
        let mut t = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| t.leaf(x.clone())).collect();
        let out = f(&mut t, &vars)?;
        Ok(t.scalar(out))
    };
    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| t.leaf(x.clone())).collect();
    let out = f(&mut t, &vars)?;
    let grads = t.backward(out)?;
    let mut worst: f64 = 0.0;
    let mut work: Vec<Array2<f64>> = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v, inputs[k].dim());
        for idx in 0..inputs[k].len() {
            let orig = inputs[k].as_slice().expect("standard layout")[idx];
            work[k].as_slice_mut().expect("standard layout")[idx] = orig + eps;
            let up = eval(&work)?;
            work[k].as_slice_mut().expect("standard layout")[idx] = orig - eps;
            let down = eval(&work)?;
            work[k].as_slice_mut().expect("standard layout")[idx] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.as_slice().expect("standard layout")[idx];
            worst = worst.max((numeric - a).abs() / (a.abs() + GRAD_FLOOR));
        }
    }
    Ok(worst)
}

/// Single-input form of [`grad_check_params`].
pub fn grad_check<F>(f: F, x: &Array2<f64>, eps: f64) -> Result<f64, AdError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, AdError>,
{
    grad_check_params(|t, v| f(t, v[0]), std::slice::from_ref(x), eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn sum_of_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&mut rng, 3, 4);
        let err = grad_check(
            |t, v| {
                let sq = t.mul(v, v)?;
                Ok(t.sum(sq))
            },
            &x,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-7, "{err}");
    }
}
