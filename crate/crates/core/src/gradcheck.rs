//! Central finite differences for checking analytic derivatives.

/// Central difference of `f` at `x` with step `h`.
pub fn central_diff(x: f64, h: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Relative error between an analytic value and a reference, guarded for
/// near-zero references.
pub fn relative_error(analytic: f64, reference: f64) -> f64 {
    (analytic - reference).abs() / reference.abs().max(1e-6)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_diff_of_square_is_linear() {
        let d = central_diff(3.0, 1e-6, |x| x * x);
        assert!((d - 6.0).abs() < 1e-8);
    }

    #[test]
    fn relative_error_guards_zero() {
        assert!(relative_error(1e-9, 0.0) < 1e-2);
        assert!((relative_error(2.0, 1.0) - 1.0).abs() < 1e-12);
    }
}
