//! Special functions for the Dirichlet terms.

pub use statrs::function::gamma::{digamma, ln_gamma};

/// ψ'(x) for x > 0: recurrence up to x ≥ 10, then the asymptotic series.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // 1/x + 1/(2x²) + Σ B_2k / x^(2k+1), Bernoulli numbers up to B_12
    let series = 1.0 / 6.0
        - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 * (1.0 / 30.0 - inv2 * (5.0 / 66.0 - inv2 * 691.0 / 2730.0))));
    acc + inv + 0.5 * inv2 + inv * inv2 * series
}
