//! Smooth one-dimensional profiles shared by the multipliers, cutoffs and the
//! damping symbol.

/// C^∞ nondecreasing step: 0 on (-∞,0], 1 on [1,∞).
pub fn smooth_step(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else if s >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / s).exp();
        let b = (-1.0 / (1.0 - s)).exp();
        a / (a + b)
    }
}

pub fn smooth_step_prime(s: f64) -> f64 {
    if s <= 0.0 || s >= 1.0 {
        0.0
    } else {
        let a = (-1.0 / s).exp();
        let b = (-1.0 / (1.0 - s)).exp();
        let da = a / (s * s);
        let db = b / ((1.0 - s) * (1.0 - s));
        (da * b + a * db) / ((a + b) * (a + b))
    }
}

/// Compact bump exp(-1/(1-s²)) on (-1,1).
pub fn bump(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - s * s)).exp()
    }
}

/// Radial low-pass profile: 1 for r ≤ 1, 0 for r ≥ 2.
pub fn dyadic_low(r: f64) -> f64 {
    1.0 - smooth_step(r - 1.0)
}

/// Dyadic annulus profile supported in 2^{j-1} < r < 2^{j+1}.
pub fn dyadic_piece(r: f64, j: i32) -> f64 {
    let c = 2f64.powi(j);
    dyadic_low(r / c) - dyadic_low(2.0 * r / c)
}

/// Smooth band window: vanishes below lo/2 and above 2hi, equals 1 on [lo, hi].
pub fn band_window(r: f64, lo: f64, hi: f64) -> f64 {
    let rise = if lo > 0.0 { smooth_step((r - lo / 2.0) / (lo / 2.0)) } else { 1.0 };
    let fall = 1.0 - smooth_step((r - hi) / hi);
    rise * fall
}
