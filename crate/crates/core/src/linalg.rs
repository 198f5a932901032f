//! Dense helpers over row-major `f64` slices.

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out += scale * x`
pub(crate) fn axpy(out: &mut [f64], scale: f64, x: &[f64]) {
    debug_assert_eq!(out.len(), x.len());
    for (o, v) in out.iter_mut().zip(x) {
        *o += scale * v;
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    libm::sqrt(dot(x, x))
}

/// Numerically stable softmax of `logits` into `out`.
///
/// The normalizer is summed in ascending order, so permuting `logits`
/// permutes `out` bit-for-bit.
pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for (o, &g) in out.iter_mut().zip(logits) {
        *o = libm::exp(g - max);
    }
    let mut sorted = out.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let total: f64 = sorted.iter().sum();
    for o in out.iter_mut() {
        *o /= total;
    }
}

pub(crate) fn all_finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite())
}
