//! Exact constructions of three benchmark scenarios, used to pin the rest of
//! the crate against values that can be computed by hand:
//!
//! - [`mutation`]: a layered graph whose expected population oscillates
//!   between two growth exponents while the process itself dies out almost
//!   surely.
//! - [`intervals`]: an alternating-interval potential with exact rational
//!   time averages, probed by a Feynman-Kac Monte Carlo estimator.
//! - [`criticality`]: a drifted diffusion with inverse-square-root branching
//!   or killing, where survival and extinction coexist at the critical
//!   parameter.

pub mod criticality;
pub mod intervals;
pub mod mutation;

pub(crate) fn ln_big(x: &num_bigint::BigUint) -> f64 {
    use num_traits::ToPrimitive;
    let bits = x.bits();
    if bits == 0 {
        return f64::NEG_INFINITY;
    }
    if bits <= 53 {
        return x.to_f64().unwrap().ln();
    }
    let shift = bits - 53;
    let top = (x >> shift).to_f64().unwrap();
    top.ln() + shift as f64 * std::f64::consts::LN_2
}
