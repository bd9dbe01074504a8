//! Layered mutation graph: particles branch by 4 every step; at times of the
//! form 4^k they reach a crossroad where each particle's family takes a rare
//! downward path (probability `8^-n` at crossroad time n) that leads to the
//! next crossroad, or the common path that dead-ends at the next crossroad
//! time. Since at most `4^n` particles exist at time n, the chance that any
//! family switches at crossroad n is at most `4^n 8^-n = 2^-n`, so the
//! population dies out almost surely even though the expected counts grow
//! with oscillating exponent (window liminf 2, window limsup 2^(7/4)).

use crate::bmc::BmcSpec;
use crate::error::{Error, Result};
use crate::law::{OffspringLaw, Placement, StateIndex};
use crate::rng::RandomSource;
use crate::trace::SurvivalEstimate;
use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;
use rayon::prelude::*;

pub const MAX_TIME: usize = 4096;

/// Crossroad times `4^k` up to and including `limit`.
pub fn crossroad_times(limit: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut n = 1usize;
    while n <= limit {
        out.push(n);
        match n.checked_mul(4) {
            Some(next) => n = next,
            None => break,
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct MutationCounts {
    /// Exact `E[N_t]` for `t = 0..=n_max`.
    pub counts: Vec<BigRational>,
    /// Growth exponents `E[N_t]^(1/t)` for `t = 1..=n_max`.
    pub exponents: Vec<f64>,
}

impl MutationCounts {
    /// (min, max) of the exponents over the top window `[n_max/2, n_max]`.
    pub fn window(&self) -> (f64, f64) {
        let n_max = self.exponents.len();
        let start = n_max.div_ceil(2);
        let slice = &self.exponents[start - 1..];
        (
            slice.iter().cloned().fold(f64::INFINITY, f64::min),
            slice.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        )
    }
}

/// Exact expected counts along the downward-lineage recursion. At crossroad
/// time n with expected count C: the following step multiplies by 4 and
/// splits children between the downward and the doomed path, both branching
/// by 4 per step until the next crossroad at 4n, where the doomed cohort is
/// killed: `C_{4n} = C_n 4^{3n} 8^{-n} = C_n 2^{3n}`, while intermediate
/// times carry both cohorts, `E[N_{n+j}] = C_n 4^j`.
pub fn expected_counts(n_max: usize) -> Result<MutationCounts> {
    if n_max == 0 || n_max > MAX_TIME {
        return Err(Error::Config(format!("n_max must lie in 1..={MAX_TIME}")));
    }
    let four = BigRational::from_integer(4.into());
    let mut counts = vec![BigRational::zero(); n_max + 1];
    counts[0] = BigRational::one();
    if n_max >= 1 {
        counts[1] = four.clone();
    }
    for n in crossroad_times(n_max) {
        let c_n = counts[n].clone();
        // downward fraction 8^-n and doomed fraction (1 - 8^-n) both branch
        // by 4 per step, so totals are C_n 4^j until the kill at 4n
        let switch = BigRational::new(BigUint::one().into(), BigUint::from(8u32).pow(n as u32).into());
        let mut both = c_n.clone();
        for j in 1..=3 * n {
            let t = n + j;
            if t > n_max {
                break;
            }
            both *= &four;
            counts[t] = if t == 4 * n { both.clone() * &switch } else { both.clone() };
        }
    }
    let exponents = (1..=n_max)
        .map(|t| {
            let c = &counts[t];
            let ln = super::ln_big(c.numer().magnitude()) - super::ln_big(c.denom().magnitude());
            (ln / t as f64).exp()
        })
        .collect();
    Ok(MutationCounts { counts, exponents })
}

/// State roles in the materialized layered graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Start,
    /// Crossroad reached at time 4^k.
    Crossroad { k: u32 },
    /// Downward path of cycle k, `step` moves past the crossroad.
    Down { k: u32, step: usize },
    /// Doomed path of cycle k; its last state produces no children (the
    /// children would land on the kill site at the next crossroad time).
    Doomed { k: u32, step: usize },
}

/// Materialize the graph as a per-state law table covering all times up to
/// `max_time`, returning the chain spec and the start state.
pub fn graph_spec(max_time: usize) -> Result<(BmcSpec, StateIndex)> {
    if max_time < 4 || max_time > MAX_TIME {
        return Err(Error::Config(format!("max_time must lie in 4..={MAX_TIME}")));
    }
    let mut roles = vec![Role::Start];
    let mut crossroad_idx = Vec::new();
    let mut down_first = Vec::new();
    let mut doomed_first = Vec::new();
    let times = crossroad_times(max_time);
    for (k, &n) in times.iter().enumerate() {
        crossroad_idx.push(roles.len());
        roles.push(Role::Crossroad { k: k as u32 });
        let span = 3 * n - 1;
        down_first.push(roles.len());
        for step in 1..=span {
            roles.push(Role::Down { k: k as u32, step });
        }
        doomed_first.push(roles.len());
        for step in 1..=span {
            roles.push(Role::Doomed { k: k as u32, step });
        }
    }
    // target crossroad past the final materialized cycle (its own law is
    // never exercised within max_time, but the state must exist)
    crossroad_idx.push(roles.len());
    roles.push(Role::Crossroad { k: times.len() as u32 });

    let mut laws: Vec<OffspringLaw> = Vec::with_capacity(roles.len());
    let four_to = |target: usize| {
        OffspringLaw::with_displacement(
            vec![(4, 1.0)],
            Placement::Independent(vec![(StateIndex(target), 1.0)]),
        )
        .unwrap()
    };
    for (idx, role) in roles.iter().enumerate() {
        let law = match *role {
            Role::Start => four_to(crossroad_idx[0]),
            Role::Crossroad { k } => {
                let k = k as usize;
                if k >= times.len() {
                    // past the modeled horizon
                    OffspringLaw::new(vec![(0, 1.0)]).unwrap()
                } else {
                    // the whole family follows its parent's path choice
                    let p_down = 0.125f64.powi(times[k] as i32);
                    OffspringLaw::with_displacement(
                        vec![(4, 1.0)],
                        Placement::AllTogether(vec![
                            (StateIndex(down_first[k]), p_down),
                            (StateIndex(doomed_first[k]), 1.0 - p_down),
                        ]),
                    )
                    .unwrap()
                }
            }
            Role::Down { k, step } => {
                let k = k as usize;
                let span = 3 * times[k] - 1;
                if step < span {
                    four_to(idx + 1)
                } else {
                    four_to(crossroad_idx[k + 1])
                }
            }
            Role::Doomed { k, step } => {
                let k = k as usize;
                let span = 3 * times[k] - 1;
                if step < span {
                    four_to(idx + 1)
                } else {
                    // children would arrive at the kill site
                    OffspringLaw::new(vec![(0, 1.0)]).unwrap()
                }
            }
        };
        laws.push(law);
    }
    let kill = OffspringLaw::new(vec![(0, 1.0)]).unwrap();
    Ok((
        BmcSpec::from_fn(move |x| laws.get(x).cloned().unwrap_or_else(|| kill.clone())),
        StateIndex(0),
    ))
}

/// Binomial sampler for huge particle counts with tiny success probability.
/// Exact inverse-CDF sampling in f64; the count enters only through ratios,
/// so the 2^-53 relative rounding of astronomically large counts is far
/// below the Monte Carlo resolution. Means below 2^-60 are rounded to a
/// certain zero.
fn binomial_huge(n: f64, p: f64, rng: &mut impl Rng) -> u64 {
    if p <= 0.0 || n <= 0.0 {
        return 0;
    }
    let mean = n * p;
    if mean < 9e-19 {
        return 0;
    }
    let log_q = n * (-p).ln_1p();
    let mut pmf = log_q.exp();
    let mut cdf = pmf;
    let u: f64 = rng.random();
    let ratio = p / (1.0 - p);
    let mut k = 0u64;
    while u > cdf && k < 10_000 {
        pmf *= (n - k as f64) / (k as f64 + 1.0) * ratio;
        cdf += pmf;
        k += 1;
    }
    k
}

#[derive(Debug, Clone)]
struct ReplicaOutcome {
    /// Time at which the population died, `None` if it outlived every
    /// simulated switch.
    extinction_time: Option<u64>,
    /// Per crossroad reached: whether at least one family switched.
    switches: Vec<(u64, bool)>,
}

/// Simulate the crossroad chain of one replica up to `max_horizon`. Only the
/// downward-switch counts are random (everything else branches
/// deterministically by 4), so a replica costs one binomial draw per
/// crossroad. Counts are kept exact and checked against the hard `4^t`
/// population bound.
fn simulate_replica(max_horizon: u64, rng: &mut impl Rng) -> ReplicaOutcome {
    let mut count_at_crossroad = BigUint::from(4u32);
    let mut n: u64 = 1;
    let mut switches = Vec::new();
    loop {
        if n >= max_horizon {
            return ReplicaOutcome { extinction_time: None, switches };
        }
        debug_assert!(count_at_crossroad <= BigUint::from(4u32).pow(n as u32));
        let p_down = 0.125f64.powi(n.min(1 << 20) as i32);
        let down = binomial_huge(bigu_to_f64(&count_at_crossroad), p_down, rng);
        switches.push((n, down > 0));
        if down == 0 {
            // doomed cohort persists until the next crossroad time and is
            // killed there
            return ReplicaOutcome { extinction_time: Some(4 * n), switches };
        }
        count_at_crossroad = BigUint::from(down) * BigUint::from(4u32).pow(3 * n as u32);
        n *= 4;
    }
}

fn bigu_to_f64(x: &BigUint) -> f64 {
    let bits = x.bits();
    if bits <= 53 {
        return x.to_f64().unwrap();
    }
    if bits > 1000 {
        return f64::MAX;
    }
    let shift = bits - 53;
    (x >> shift).to_f64().unwrap() * 2f64.powi(shift as i32)
}

#[derive(Debug, Clone)]
pub struct MutationSurvivalSweep {
    pub horizons: Vec<u64>,
    pub per_horizon: Vec<SurvivalEstimate>,
    /// Per crossroad time: (replicas that reached it, replicas in which some
    /// family switched there). The conditional frequency is bounded by
    /// `4^n 8^-n = 2^-n`.
    pub switch_stats: Vec<(u64, usize, usize)>,
}

/// Coupled survival frequencies at several horizons: each replica is
/// simulated once, so the survival events are nested pathwise and the
/// estimates are monotone by construction. A replica survives horizon `h`
/// when its population is positive at every time before `h` (the doomed
/// cohort of a failed switch at crossroad m persists on `(m, 4m)` and dies
/// exactly at `4m`).
pub fn survival_sweep(
    horizons: &[u64],
    replicas: usize,
    rng: RandomSource,
) -> Result<MutationSurvivalSweep> {
    if horizons.iter().any(|&h| !h.is_power_of_two() || h.trailing_zeros() % 2 != 0) {
        return Err(Error::Config("horizons must be powers of 4".into()));
    }
    let max_horizon = *horizons.iter().max().unwrap_or(&4);
    let outcomes: Vec<ReplicaOutcome> = (0..replicas)
        .into_par_iter()
        .map(|k| {
            let mut r = rng.offset(k as u64).rng();
            simulate_replica(max_horizon, &mut r)
        })
        .collect();
    let per_horizon = horizons
        .iter()
        .map(|&h| {
            let survived = outcomes
                .iter()
                .filter(|o| o.extinction_time.map_or(true, |e| e >= h))
                .count();
            SurvivalEstimate::from_outcomes(survived, 0, replicas)
        })
        .collect();
    let mut stats: std::collections::BTreeMap<u64, (usize, usize)> = Default::default();
    for o in &outcomes {
        for &(n, switched) in &o.switches {
            let entry = stats.entry(n).or_insert((0, 0));
            entry.0 += 1;
            entry.1 += usize::from(switched);
        }
    }
    Ok(MutationSurvivalSweep {
        horizons: horizons.to_vec(),
        per_horizon,
        switch_stats: stats.into_iter().map(|(n, (a, s))| (n, a, s)).collect(),
    })
}

pub fn survival_mc(horizon: u64, replicas: usize, rng: RandomSource) -> Result<SurvivalEstimate> {
    Ok(survival_sweep(&[horizon], replicas, rng)?.per_horizon.pop().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bmc::expected_counts as bmc_expected_counts;

    #[test]
    fn one_branching_step_gives_four() {
        let mc = expected_counts(8).unwrap();
        assert_eq!(mc.counts[1], BigRational::from_integer(4.into()));
    }

    #[test]
    fn window_exponents_split_at_4_to_the_4() {
        let mc = expected_counts(256).unwrap();
        let (lo, hi) = mc.window();
        assert!((lo - 2.0).abs() < 0.05, "window min {lo}");
        assert!((hi - 2f64.powf(1.75)).abs() < 0.05, "window max {hi}");
    }

    #[test]
    fn crossroad_counts_beat_two_to_the_n() {
        // E[N_n] >= 2^n at every crossroad time n
        let mc = expected_counts(256).unwrap();
        for n in crossroad_times(256) {
            let bound = BigRational::from_integer(BigUint::from(2u32).pow(n as u32).into());
            assert!(mc.counts[n] >= bound, "E[N_{n}] below 2^{n}");
        }
    }

    #[test]
    fn kernel_route_matches_exact_recursion() {
        // the materialized layered graph and the closed recursion are two
        // independent constructions; their expected counts agree exactly in
        // f64 (every factor is a dyadic rational times a small integer)
        let (spec, start) = graph_spec(64).unwrap();
        let mc = expected_counts(64).unwrap();
        for t in 0..=64usize {
            let via_kernel = bmc_expected_counts(&spec, start, t, 4096).unwrap();
            let exact = mc.counts[t].to_f64().unwrap();
            assert_eq!(via_kernel, exact, "t = {t}");
        }
    }

    #[test]
    fn simulated_population_respects_the_hard_bound() {
        // the 4^t bound is a debug assertion inside the replica; run a batch
        let src = RandomSource::new(51);
        for k in 0..200 {
            let mut rng = src.offset(k).rng();
            let _ = simulate_replica(256, &mut rng);
        }
    }

    #[test]
    fn survival_positive_at_first_horizon_and_coupled_decreasing() {
        let sweep = survival_sweep(&[4, 16, 64], 20_000, RandomSource::new(52)).unwrap();
        let est = &sweep.per_horizon;
        assert!(est[0].estimate > 0.5, "horizon 4: {}", est[0].estimate);
        assert!(est[0].estimate > est[1].estimate);
        assert!(est[1].estimate >= est[2].estimate);
        assert!(survival_sweep(&[5], 10, RandomSource::new(0)).is_err());
    }

    #[test]
    fn layered_graph_has_no_irreducible_truncation() {
        // the graph is a DAG: every breadth-first truncation has a trivial
        // root component, so no Perron value can be certified
        let (spec, start) = graph_spec(16).unwrap();
        let kernel = spec.kernel();
        let report =
            crate::spectral::spectral_radius_truncation(&kernel, start, &[4, 16]).unwrap();
        assert!(report.estimates.is_empty());
        assert_eq!(report.warnings.len(), 2);
    }

    #[test]
    fn layered_graph_violates_reversibility() {
        let (spec, start) = graph_spec(16).unwrap();
        let kernel = spec.kernel();
        let report = crate::spectral::reversible_criterion_check(
            &kernel,
            start,
            &crate::spectral::ReversibleOptions {
                n_max: 12,
                state_cap: 256,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(report.violation.is_some());
        assert!(!report.hypotheses_hold);
    }

    #[test]
    fn growth_windows_from_the_kernel_route() {
        // same exponent windows through the generic growth estimator
        let (spec, start) = graph_spec(256).unwrap();
        let est = crate::spectral::rho_double_prime_growth(&spec.kernel(), start, 256, 4096)
            .unwrap();
        assert!((est.value - 2f64.powf(1.75)).abs() < 0.05, "window max {}", est.value);
        let window_min = est.lower.unwrap();
        assert!((window_min - 2.0).abs() < 0.05, "window min {window_min}");
    }

    #[test]
    fn per_crossroad_switch_frequency_respects_union_bound() {
        // P(some family switches at crossroad n | reached) <= 4^n 8^-n = 2^-n
        let sweep = survival_sweep(&[256], 50_000, RandomSource::new(53)).unwrap();
        for &(n, attempts, switched) in &sweep.switch_stats {
            if attempts < 100 {
                continue;
            }
            let freq = switched as f64 / attempts as f64;
            let bound = 0.5f64.powi(n as i32);
            let slack = 5.0 * (bound / attempts as f64).sqrt();
            assert!(freq <= bound + slack, "crossroad {n}: {freq} above {bound}");
        }
    }
}
