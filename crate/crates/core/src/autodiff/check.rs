use twofloat::TwoFloat;

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn central_difference<F>(f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Central difference of a function evaluated in double-double precision.
/// The perturbed points are still `f64`; only the function values and their
/// difference carry the extra precision.
pub fn central_difference_dd<F>(f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> TwoFloat,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let (up, step_up) = (f(&probe), probe[i]);
            probe[i] = orig - h;
            let (down, step_down) = (f(&probe), probe[i]);
            probe[i] = orig;
            f64::from(super::dd::div(up - down, TwoFloat::from(step_up) - step_down))
        })
        .collect()
}

/// `max_i |a_i - fd_i| / (|a_i| + 1e-8)`.
pub fn relative_error(analytic: &[f64], fd: &[f64]) -> f64 {
    assert_eq!(analytic.len(), fd.len(), "gradient lengths differ");
    fd.iter()
        .zip(analytic)
        .map(|(fd, a)| (a - fd).abs() / (a.abs() + 1e-8))
        .fold(0.0, f64::max)
}

/// Worst relative disagreement between `analytic` and the central
/// difference of `f`: `max_i |a_i - fd_i| / (|a_i| + 1e-8)`.
pub fn finite_diff_check<F>(f: F, analytic: &[f64], x: &[f64], h: f64) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(analytic.len(), x.len(), "gradient and point differ in length");
    relative_error(analytic, &central_difference(f, x, h))
}
