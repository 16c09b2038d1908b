//! Dense complex linear-algebra vocabulary shared by the other modules.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
#[allow(unused_imports)] // shadowed by inherent f64 methods whenever std is linked
use num_traits::Float;

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;
pub type RVec = DVector<f64>;

pub const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
pub const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };
pub const J: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Elementwise magnitude.
pub fn abs(v: &CVec) -> RVec {
    v.map(|z| z.norm())
}

/// `arg(z)` with `arg(0) = 0`.
pub fn phase(z: Complex64) -> f64 {
    if z == ZERO {
        0.0
    } else {
        z.arg()
    }
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_phase(a: f64) -> f64 {
    use core::f64::consts::PI;
    let mut w = a % (2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    } else if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

/// `‖a − b‖ / ‖b‖`; returns `‖a‖` when `b = 0`.
pub fn rel_diff_real(a: &RVec, b: &RVec) -> f64 {
    let den = b.norm();
    let num = (a - b).norm();
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

pub fn rel_diff(a: &CVec, b: &CVec) -> f64 {
    let den = b.norm();
    let num = (a - b).norm();
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

/// Unit phasor `e^{jθ}` that best aligns `estimate` with `reference`,
/// i.e. the minimizer of `‖e^{jθ}·estimate − reference‖`.
pub fn alignment_phasor(estimate: &CVec, reference: &CVec) -> Complex64 {
    let inner = estimate.dotc(reference);
    let n = inner.norm();
    if n > 0.0 {
        inner / n
    } else {
        ONE
    }
}

/// `min_θ ‖e^{jθ}·estimate − reference‖ / ‖reference‖`.
pub fn phase_aligned_error(estimate: &CVec, reference: &CVec) -> f64 {
    let rot = alignment_phasor(estimate, reference);
    rel_diff(&(estimate * rot), reference)
}

/// Frobenius-relative difference of two matrices.
pub fn rel_diff_mat(a: &CMat, b: &CMat) -> f64 {
    let den = b.norm();
    let num = (a - b).norm();
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

/// Largest singular value.
pub fn spectral_norm(a: &CMat) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone().singular_values().iter().fold(0.0_f64, |acc, &s| acc.max(s))
}

/// Scales the rows of `a` by the entries of `d` (`diag(d)·a`).
pub fn scale_rows(d: &CVec, a: &CMat) -> CMat {
    let mut out = a.clone();
    for c in 0..out.ncols() {
        for (r, &s) in d.iter().enumerate() {
            out[(r, c)] *= s;
        }
    }
    out
}

pub fn db20(x: f64) -> f64 {
    20.0 * x.log10()
}
