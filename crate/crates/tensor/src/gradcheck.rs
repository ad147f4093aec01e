//! Central finite differences, used as an independent oracle for the
//! analytic gradients recorded on a [`crate::Tape`].

use crate::Tensor;

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for the flat index `i`.
pub fn central_difference(
    mut f: impl FnMut(&Tensor) -> f64,
    x: &Tensor,
    index: usize,
    h: f32,
) -> f64 {
    let mut plus = x.clone();
    plus.data_mut()[index] += h;
    let mut minus = x.clone();
    minus.data_mut()[index] -= h;
    // Use the realised step: x ± h is rounded in f32.
    let step = plus.data()[index] as f64 - minus.data()[index] as f64;
    (f(&plus) - f(&minus)) / step
}

/// Relative error `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
