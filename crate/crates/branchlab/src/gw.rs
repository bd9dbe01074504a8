//! Exact single-type Galton-Watson oracle: extinction probability as the
//! minimal fixed point of the generating function, plus criticality
//! classification. Every survival estimator in the crate is tested against
//! these values on single-type reductions.

use crate::error::Result;
use crate::law::OffspringLaw;
use serde::{Deserialize, Serialize};

pub const FIXED_POINT_TOL: f64 = 1e-14;
pub const MAX_ITERATIONS: usize = 100_000;
/// Residual above which hitting the iteration cap is flagged as
/// non-convergence (possible near criticality, where convergence is only
/// polynomial).
pub const RESIDUAL_FLAG: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Subcritical,
    Critical,
    Supercritical,
}

/// Result of the fixed-point iteration for the extinction probability.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtinctionResult {
    /// Minimal fixed point of `s -> G(s)` reached by iterating from 0.
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `|G(q) - q|` at the returned value.
    pub residual: f64,
    /// Aitken-extrapolated secondary estimate; reported alongside because the
    /// plain iteration converges only polynomially near criticality.
    pub aitken: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GwClassification {
    pub mean: f64,
    pub regime: Regime,
    pub extinction_prob: f64,
    pub iterations: usize,
    pub converged: bool,
    pub aitken: Option<f64>,
}

/// Minimal fixed point of the generating function, computed by monotone
/// iteration from 0. Iterating from 0 is guaranteed nondecreasing and
/// converges to the smallest root, which is the extinction probability.
pub fn extinction_probability(law: &OffspringLaw) -> Result<ExtinctionResult> {
    let mut s = 0.0f64;
    let mut prev2 = None;
    let mut prev1 = None;
    let mut iterations = 0;
    let mut converged = false;
    for k in 1..=MAX_ITERATIONS {
        let next = law.generating_value(s)?;
        iterations = k;
        prev2 = prev1;
        prev1 = Some(s);
        let done = (next - s).abs() < FIXED_POINT_TOL;
        s = next;
        if done {
            converged = true;
            break;
        }
    }
    let residual = (law.generating_value(s)? - s).abs();
    if !converged && residual <= RESIDUAL_FLAG {
        // Cap hit, but the residual is already at target accuracy.
        converged = true;
    }
    let aitken = match (prev2, prev1) {
        (Some(s0), Some(s1)) => aitken_step(s0, s1, s),
        _ => None,
    };
    Ok(ExtinctionResult { value: s, iterations, converged, residual, aitken })
}

fn aitken_step(s0: f64, s1: f64, s2: f64) -> Option<f64> {
    let d1 = s1 - s0;
    let d2 = s2 - 2.0 * s1 + s0;
    if d2.abs() < 1e-300 {
        return None;
    }
    let a = s0 - d1 * d1 / d2;
    (0.0..=1.0).contains(&a).then_some(a)
}

/// Mean, regime, and extinction probability in one report.
pub fn classify(law: &OffspringLaw) -> Result<GwClassification> {
    let mean = law.mean();
    let regime = if mean > 1.0 {
        Regime::Supercritical
    } else if mean < 1.0 {
        Regime::Subcritical
    } else {
        Regime::Critical
    };
    let ext = extinction_probability(law)?;
    Ok(GwClassification {
        mean,
        regime,
        extinction_prob: ext.value,
        iterations: ext.iterations,
        converged: ext.converged,
        aitken: ext.aitken,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomSource;
    use rand::Rng;

    /// Independent oracle: bisection for the smallest root of G(s) - s on
    /// [0, 1).
    fn bisection_oracle(law: &OffspringLaw) -> f64 {
        let g = |s: f64| law.generating_value(s).unwrap() - s;
        // Scan for the first sign change left of 1.
        let mut lo = 0.0f64;
        let mut hi = 1.0f64;
        let steps = 4096;
        let mut found = false;
        for k in 1..steps {
            let s = k as f64 / steps as f64;
            if g(s) <= 0.0 {
                lo = (k - 1) as f64 / steps as f64;
                hi = s;
                found = true;
                break;
            }
        }
        if !found {
            return 1.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn critical_half_half_dies_out() {
        // the critical iteration converges only polynomially: the cap fires,
        // the residual flag reports it, and Aitken extrapolation closes most
        // of the remaining gap
        let law = OffspringLaw::new(vec![(0, 0.5), (2, 0.5)]).unwrap();
        let c = classify(&law).unwrap();
        assert_eq!(c.regime, Regime::Critical);
        assert!(c.extinction_prob > 1.0 - 1e-4, "q = {}", c.extinction_prob);
        let ext = extinction_probability(&law).unwrap();
        assert!(!ext.converged, "cap must fire near criticality");
        assert!(ext.residual > 1e-10 || ext.value > 1.0 - 1e-7);
        let aitken = c.aitken.expect("aitken reported");
        assert!((aitken - 1.0).abs() <= (c.extinction_prob - 1.0).abs());
    }

    #[test]
    fn deterministic_doubling_never_dies() {
        let law = OffspringLaw::new(vec![(2, 1.0)]).unwrap();
        let c = classify(&law).unwrap();
        assert_eq!(c.regime, Regime::Supercritical);
        assert_eq!(c.extinction_prob, 0.0);
    }

    #[test]
    fn quarter_law_fixed_point_is_one_third() {
        let law = OffspringLaw::new(vec![(0, 0.25), (2, 0.75)]).unwrap();
        let ext = extinction_probability(&law).unwrap();
        assert!(ext.converged);
        let oracle = bisection_oracle(&law);
        assert!((ext.value - oracle).abs() < 1e-10, "{} vs oracle {}", ext.value, oracle);
        assert!((ext.value - 1.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn monotone_iteration_is_nondecreasing_and_bounded() {
        let law = OffspringLaw::new(vec![(0, 0.3), (1, 0.2), (2, 0.1), (3, 0.4)]).unwrap();
        let mut s = 0.0;
        for _ in 0..500 {
            let next = law.generating_value(s).unwrap();
            assert!(next >= s - 1e-15);
            assert!(next <= 1.0);
            s = next;
        }
    }

    #[test]
    fn extinction_is_certain_iff_mean_at_most_one() {
        // Randomized laws with mean straddling 1 (p1 != 1 throughout).
        let mut rng = RandomSource::new(17).rng();
        for _ in 0..60 {
            let p0: f64 = rng.random_range(0.05..0.6);
            let p2: f64 = rng.random_range(0.05..(1.0 - p0 - 0.01));
            let p3: f64 = rng.random_range(0.0..(1.0 - p0 - p2).max(1e-9));
            let p1 = 1.0 - p0 - p2 - p3;
            let law =
                OffspringLaw::new(vec![(0, p0), (1, p1.max(0.0)), (2, p2), (3, p3)]).unwrap();
            let c = classify(&law).unwrap();
            if c.mean <= 1.0 {
                assert!(c.extinction_prob > 1.0 - 1e-5, "mean {} q {}", c.mean, c.extinction_prob);
            } else {
                assert!(c.extinction_prob < 1.0 - 1e-7, "mean {} q {}", c.mean, c.extinction_prob);
            }
        }
    }

    #[test]
    fn near_critical_reports_aitken() {
        // Slightly supercritical: slow linear convergence, Aitken should
        // land closer to the bisection root than plain iteration per step.
        let law = OffspringLaw::new(vec![(0, 0.4995), (2, 0.5005)]).unwrap();
        let ext = extinction_probability(&law).unwrap();
        let oracle = bisection_oracle(&law);
        assert!((ext.value - oracle).abs() < 1e-8);
        let aitken = ext.aitken.expect("aitken estimate available");
        assert!((aitken - oracle).abs() <= (ext.value - oracle).abs() + 1e-12);
    }
}
