//! Central-difference gradient oracle.

use super::{Element, Result, Tensor, TensorError};

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate `i`.
pub fn finite_diff_grad<T, E, F>(mut f: F, x: &[T], h: f64) -> std::result::Result<Vec<T>, E>
where
    T: Element,
    F: FnMut(&[T]) -> std::result::Result<T, E>,
{
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + T::of(h);
        let up = f(&probe)?;
        probe[i] = orig - T::of(h);
        let down = f(&probe)?;
        probe[i] = orig;
        out.push((up - down) / T::of(2.0 * h));
    }
    Ok(out)
}

/// Finite-difference gradient of a scalar-valued tensor function.
pub fn finite_diff_tensor<T, F>(f: F, x: &Tensor<T>, h: f64) -> Result<Tensor<T>>
where
    T: Element,
    F: Fn(&Tensor<T>) -> Result<Tensor<T>>,
{
    let g = finite_diff_grad(
        |buf| Ok::<_, TensorError>(f(&Tensor::new(x.shape(), buf.to_vec())?)?.item()),
        x.data(),
        h,
    )?;
    Tensor::new(x.shape(), g)
}

/// Largest elementwise `|a - b| / max(|a|, |b|, floor)`.
///
/// `floor` is 1e-3 of the largest magnitude in either vector, so entries that
/// are tiny relative to the gradient's scale are compared absolutely.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Compare backward against central differences for every input of `f`.
/// Returns the worst [`max_relative_error`] over all inputs.
pub fn check_gradients<T, E, F>(inputs: &[Tensor<T>], h: f64, f: F) -> std::result::Result<f64, E>
where
    T: Element,
    E: From<TensorError>,
    F: Fn(&[Tensor<T>]) -> std::result::Result<Tensor<T>, E>,
{
    let params: Vec<Tensor<T>> = inputs
        .iter()
        .map(|t| Tensor::param(t.shape(), t.to_vec()))
        .collect::<Result<_>>()?;
    f(&params)?.backward()?;

    let mut worst = 0.0f64;
    for (i, p) in params.iter().enumerate() {
        let analytic: Vec<f64> = p
            .grad()
            .unwrap_or_else(|| vec![T::zero(); p.numel()])
            .into_iter()
            .map(T::to_f64)
            .collect();
        let numeric = finite_diff_grad(
            |buf| {
                let mut args: Vec<Tensor<T>> = inputs.iter().map(Tensor::detach).collect();
                args[i] = Tensor::new(p.shape(), buf.to_vec())?;
                Ok::<T, E>(f(&args)?.item())
            },
            p.data(),
            h,
        )?;
        let numeric: Vec<f64> = numeric.into_iter().map(T::to_f64).collect();
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }
    Ok(worst)
}
