use super::Array;

/// Central-difference gradient `(f(x + h e_i) - f(x - h e_i)) / 2h` of a scalar function.
///
/// Used as a test oracle; it never touches the tape.
pub fn finite_diff_gradient(f: impl Fn(&Array) -> f64, x: &Array, step: f64) -> Array {
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut probe = x.clone();
    let mut out = Array::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - step;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (plus - minus) / (2.0 * step);
    }
    out
}
