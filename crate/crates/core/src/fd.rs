//! Finite-difference bookkeeping shared by the derivative checks.

/// Denominator floor of the relative-error convention `|a - b| / (|b| + floor)`.
pub const REL_FLOOR: f64 = 1e-12;

/// Relative error of `value` against `reference`.
pub fn rel_err(value: f64, reference: f64) -> f64 {
    (value - reference).abs() / (reference.abs() + REL_FLOOR)
}

/// Max-norm relative error of two vectors, scaled by the reference's max norm.
pub fn rel_err_vec(value: &[f64], reference: &[f64]) -> f64 {
    let diff = value
        .iter()
        .zip(reference)
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    let scale = reference.iter().fold(0.0_f64, |m, b| m.max(b.abs()));
    diff / (scale + REL_FLOOR)
}

/// Observed convergence order from errors at steps `h` and `h/2`.
pub fn observed_order(err_h: f64, err_half: f64) -> f64 {
    (err_h / err_half).log2()
}

/// Convergence verdict for one step-halving.
///
/// When the error at `h/2` has already reached `noise_floor` the
/// difference quotient has converged to rounding, and the order estimate
/// is meaningless; that case counts as converged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderCheck {
    pub err_h: f64,
    pub err_half: f64,
    pub order: f64,
    pub at_noise_floor: bool,
}

impl OrderCheck {
    pub fn new(err_h: f64, err_half: f64, noise_floor: f64) -> Self {
        Self {
            err_h,
            err_half,
            order: observed_order(err_h, err_half),
            at_noise_floor: err_half <= noise_floor,
        }
    }

    pub fn passes(&self, min_order: f64) -> bool {
        self.at_noise_floor || self.order >= min_order
    }
}
