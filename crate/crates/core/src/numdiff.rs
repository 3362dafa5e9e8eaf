//! Central finite differences for checking hand-written gradients.

/// Central-difference gradient of `f` at `x` for the coordinates in `indices`.
pub fn central_difference_at<F>(mut f: F, x: &[f64], indices: &[usize], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    indices
        .iter()
        .map(|&i| {
            probe[i] = x[i] + h;
            let plus = f(&probe);
            probe[i] = x[i] - h;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Central-difference gradient over every coordinate.
pub fn central_difference<F>(f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let all: Vec<usize> = (0..x.len()).collect();
    central_difference_at(f, x, &all, h)
}

/// `max |a − n| / max(‖a‖∞, ‖n‖∞, floor)`: worst coordinate error relative to
/// the gradient's overall magnitude.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-10);
    let worst = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    worst / scale
}
