use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Index into a countable state space. Materialized truncations keep ids
/// dense in `[0, truncation_size)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateIndex(pub usize);

impl From<usize> for StateIndex {
    fn from(id: usize) -> Self {
        StateIndex(id)
    }
}

impl std::fmt::Display for StateIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Where children land relative to their parent. Absent a placement, all
/// children stay at the parent's state (purely local branching). Both
/// variants induce the same expectation kernel row; they differ in how the
/// children are correlated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Every child independently jumps to one of the listed target states.
    Independent(Vec<(StateIndex, f64)>),
    /// One target is drawn per branching event and all children land there.
    AllTogether(Vec<(StateIndex, f64)>),
}

impl Placement {
    fn validate(&self) -> Result<()> {
        let targets = self.targets();
        if targets.is_empty() {
            return Err(Error::InvalidLaw("placement has no targets".into()));
        }
        if targets.iter().any(|&(_, w)| w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidLaw("placement weight negative or non-finite".into()));
        }
        let total: f64 = targets.iter().map(|&(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidLaw(format!(
                "placement weights sum to {total}, expected 1"
            )));
        }
        Ok(())
    }

    fn targets_mut(&mut self) -> &mut Vec<(StateIndex, f64)> {
        match self {
            Placement::Independent(t) | Placement::AllTogether(t) => t,
        }
    }

    fn normalize(&mut self) {
        let targets = self.targets_mut();
        let total: f64 = targets.iter().map(|&(_, w)| w).sum();
        // skip when already within a few ulps so construction round-trips
        // bit-for-bit
        if (total - 1.0).abs() > 8.0 * f64::EPSILON {
            for (_, w) in targets.iter_mut() {
                *w /= total;
            }
        }
    }

    pub fn targets(&self) -> &[(StateIndex, f64)] {
        match self {
            Placement::Independent(t) | Placement::AllTogether(t) => t,
        }
    }

    pub fn sample_target(&self, rng: &mut impl Rng) -> StateIndex {
        let targets = self.targets();
        let mut u: f64 = rng.random();
        for &(y, w) in targets {
            if u < w {
                return y;
            }
            u -= w;
        }
        targets.last().unwrap().0
    }
}

#[derive(Serialize, Deserialize)]
struct RawLaw {
    probs: Vec<(u32, f64)>,
    displacement: Option<Placement>,
}

/// Offspring distribution with explicit finite support, optionally paired
/// with a displacement kernel for the children.
///
/// Laws with unbounded support must be truncated by the caller; keeping the
/// atom list explicit keeps sampling exact and auditable. Probabilities are
/// renormalized at construction when the total deviates from 1 by at most
/// 1e-12; larger deviations are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLaw", into = "RawLaw")]
pub struct OffspringLaw {
    probs: Vec<(u32, f64)>,
    displacement: Option<Placement>,
}

impl TryFrom<RawLaw> for OffspringLaw {
    type Error = Error;
    fn try_from(raw: RawLaw) -> Result<Self> {
        match raw.displacement {
            Some(d) => OffspringLaw::with_displacement(raw.probs, d),
            None => OffspringLaw::new(raw.probs),
        }
    }
}

impl From<OffspringLaw> for RawLaw {
    fn from(law: OffspringLaw) -> RawLaw {
        RawLaw {
            probs: law.probs,
            displacement: law.displacement,
        }
    }
}

impl OffspringLaw {
    pub fn new(probs: Vec<(u32, f64)>) -> Result<Self> {
        Self::build(probs, None)
    }

    pub fn with_displacement(probs: Vec<(u32, f64)>, displacement: Placement) -> Result<Self> {
        displacement.validate()?;
        let mut displacement = displacement;
        displacement.normalize();
        Self::build(probs, Some(displacement))
    }

    fn build(mut probs: Vec<(u32, f64)>, displacement: Option<Placement>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidLaw("no atoms".into()));
        }
        if probs.iter().any(|&(_, p)| p < 0.0 || !p.is_finite()) {
            return Err(Error::InvalidLaw("probability negative or non-finite".into()));
        }
        probs.sort_by_key(|&(n, _)| n);
        if probs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidLaw("duplicate offspring count".into()));
        }
        let total: f64 = probs.iter().map(|&(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidLaw(format!(
                "probabilities sum to {total}, expected 1 within 1e-12"
            )));
        }
        if (total - 1.0).abs() > 8.0 * f64::EPSILON {
            for (_, p) in probs.iter_mut() {
                *p /= total;
            }
        }
        Ok(Self { probs, displacement })
    }

    /// Deterministic single-child law that keeps the particle in place.
    pub fn identity() -> Self {
        Self::new(vec![(1, 1.0)]).unwrap()
    }

    pub fn probs(&self) -> &[(u32, f64)] {
        &self.probs
    }

    pub fn displacement(&self) -> Option<&Placement> {
        self.displacement.as_ref()
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().map(|&(n, p)| n as f64 * p).sum()
    }

    pub fn max_children(&self) -> u32 {
        self.probs.iter().filter(|&&(_, p)| p > 0.0).map(|&(n, _)| n).max().unwrap_or(0)
    }

    pub fn min_children(&self) -> u32 {
        self.probs.iter().filter(|&&(_, p)| p > 0.0).map(|&(n, _)| n).min().unwrap_or(0)
    }

    pub fn prob_of(&self, n: u32) -> f64 {
        self.probs.iter().find(|&&(k, _)| k == n).map_or(0.0, |&(_, p)| p)
    }

    /// Draw a number of children by inverse CDF on a single uniform.
    pub fn sample_count(&self, rng: &mut impl Rng) -> u32 {
        let mut u: f64 = rng.random();
        for &(n, p) in &self.probs {
            if u < p {
                return n;
            }
            u -= p;
        }
        self.probs.last().unwrap().0
    }

    /// Probability generating value `sum_n p_n s^n` (with `s^0 = 1`).
    pub fn generating_value(&self, s: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::Domain(format!("generating_value: s = {s} outside [0, 1]")));
        }
        Ok(self.probs.iter().map(|&(n, p)| p * s.powi(n as i32)).sum())
    }
}

/// Draw one branching event: a child count from `law`, children placed by
/// the displacement kernel, or at `parent` when the law is purely local.
pub fn sample_offspring(
    law: &OffspringLaw,
    parent: StateIndex,
    rng: &mut impl Rng,
) -> Vec<StateIndex> {
    let n = law.sample_count(rng);
    match law.displacement() {
        None => vec![parent; n as usize],
        Some(p @ Placement::Independent(_)) => (0..n).map(|_| p.sample_target(rng)).collect(),
        Some(p @ Placement::AllTogether(_)) => vec![p.sample_target(rng); n as usize],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomSource;

    fn quarter_law() -> OffspringLaw {
        OffspringLaw::new(vec![(0, 0.25), (2, 0.75)]).unwrap()
    }

    #[test]
    fn deterministic_single_child_stays_local() {
        let law = OffspringLaw::new(vec![(1, 1.0)]).unwrap();
        let mut rng = RandomSource::new(1).rng();
        assert_eq!(sample_offspring(&law, StateIndex(5), &mut rng), vec![StateIndex(5)]);
    }

    #[test]
    fn pure_killing_yields_no_children() {
        let law = OffspringLaw::new(vec![(0, 1.0)]).unwrap();
        let mut rng = RandomSource::new(1).rng();
        assert!(sample_offspring(&law, StateIndex(5), &mut rng).is_empty());
    }

    #[test]
    fn empirical_mean_matches_binomial_oracle() {
        // mean 1.5, Var = E[n^2] - mean^2 = 3 - 2.25 = 0.75 per draw.
        let law = quarter_law();
        let draws = 1_000_000u32;
        let mut rng = RandomSource::new(42).rng();
        let total: u64 = (0..draws).map(|_| law.sample_count(&mut rng) as u64).sum();
        let mean = total as f64 / draws as f64;
        let sigma = (0.75f64 / draws as f64).sqrt();
        assert!((mean - 1.5).abs() < 3.0 * sigma, "mean {mean} vs 1.5 +- {}", 3.0 * sigma);
    }

    #[test]
    fn generating_value_examples() {
        let sq = OffspringLaw::new(vec![(2, 1.0)]).unwrap();
        assert!((sq.generating_value(0.5).unwrap() - 0.25).abs() < 1e-15);
        assert!((sq.generating_value(1.0).unwrap() - 1.0).abs() < 1e-15);
        // fixed point of 1/4 + (3/4) s^2 at s = 1/3
        let law = quarter_law();
        let s = 1.0 / 3.0;
        assert!((law.generating_value(s).unwrap() - s).abs() < 1e-15);
        assert!(law.generating_value(-0.1).is_err());
        assert!(law.generating_value(1.1).is_err());
    }

    #[test]
    fn renormalization_tolerates_tiny_drift_only() {
        let drifted = OffspringLaw::new(vec![(0, 0.25 + 4e-13), (2, 0.75)]).unwrap();
        let total: f64 = drifted.probs().iter().map(|&(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-15);
        assert!(OffspringLaw::new(vec![(0, 0.3), (2, 0.75)]).is_err());
        assert!(OffspringLaw::new(vec![(0, -0.1), (2, 1.1)]).is_err());
    }

    #[test]
    fn json_round_trip_matches_schema() {
        let law = OffspringLaw::with_displacement(
            vec![(0, 0.25), (2, 0.75)],
            Placement::Independent(vec![(StateIndex(3), 0.5), (StateIndex(4), 0.5)]),
        )
        .unwrap();
        let json = serde_json::to_string(&law).unwrap();
        assert!(json.contains("\"probs\":[[0,0.25],[2,0.75]]"), "{json}");
        let back: OffspringLaw = serde_json::from_str(&json).unwrap();
        assert_eq!(back, law);
        let local: OffspringLaw =
            serde_json::from_str(r#"{"probs": [[1, 1.0]], "displacement": null}"#).unwrap();
        assert_eq!(local, OffspringLaw::identity());
    }

    #[test]
    fn chi_square_on_sampled_counts() {
        // 1e6 draws from {p0, p1, p3}; chi-square must stay below the
        // 0.999 quantile for 2 degrees of freedom.
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let law = OffspringLaw::new(vec![(0, 0.2), (1, 0.5), (3, 0.3)]).unwrap();
        let draws = 1_000_000usize;
        let mut rng = RandomSource::new(9).rng();
        let mut observed = std::collections::BTreeMap::new();
        for _ in 0..draws {
            *observed.entry(law.sample_count(&mut rng)).or_insert(0u64) += 1;
        }
        let chi2: f64 = law
            .probs()
            .iter()
            .map(|&(n, p)| {
                let exp = p * draws as f64;
                let obs = *observed.get(&n).unwrap_or(&0) as f64;
                (obs - exp).powi(2) / exp
            })
            .sum();
        let crit = ChiSquared::new((law.probs().len() - 1) as f64)
            .unwrap()
            .inverse_cdf(0.999);
        assert!(chi2 < crit, "chi2 {chi2} above 0.999 quantile {crit}");
    }

    #[test]
    fn sampling_is_reproducible_per_stream() {
        let law = quarter_law();
        let run = |src: RandomSource| -> Vec<u32> {
            let mut rng = src.rng();
            (0..256).map(|_| law.sample_count(&mut rng)).collect()
        };
        assert_eq!(run(RandomSource::new(3).with_stream(12)), run(RandomSource::new(3).with_stream(12)));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arbitrary_law() -> impl Strategy<Value = OffspringLaw> {
            proptest::collection::vec((0u32..8, 1e-3f64..1.0), 1..6).prop_map(|atoms| {
                let mut merged = std::collections::BTreeMap::new();
                for (n, w) in atoms {
                    *merged.entry(n).or_insert(0.0) += w;
                }
                let total: f64 = merged.values().sum();
                OffspringLaw::new(merged.into_iter().map(|(n, w)| (n, w / total)).collect())
                    .unwrap()
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            // generating value is nondecreasing and convex on [0, 1]
            #[test]
            fn generating_value_monotone_convex(law in arbitrary_law()) {
                let grid: Vec<f64> =
                    (0..=100).map(|k| k as f64 / 100.0).collect();
                let vals: Vec<f64> =
                    grid.iter().map(|&s| law.generating_value(s).unwrap()).collect();
                for w in vals.windows(2) {
                    prop_assert!(w[1] >= w[0] - 1e-12);
                }
                for w in vals.windows(3) {
                    prop_assert!(w[0] + w[2] >= 2.0 * w[1] - 1e-12);
                }
                prop_assert!((vals[100] - 1.0).abs() < 1e-12);
            }

            #[test]
            fn json_round_trip(law in arbitrary_law()) {
                let back: OffspringLaw =
                    serde_json::from_str(&serde_json::to_string(&law).unwrap()).unwrap();
                prop_assert_eq!(back, law);
            }

            #[test]
            fn sampled_counts_stay_in_support(law in arbitrary_law(), seed in 0u64..1000) {
                let mut rng = RandomSource::new(seed).rng();
                for _ in 0..64 {
                    let n = law.sample_count(&mut rng);
                    prop_assert!(law.prob_of(n) > 0.0);
                }
            }
        }
    }
}

