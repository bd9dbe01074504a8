//! Discrete-time branching Markov chains on countable state spaces: the
//! expectation (first-moment) kernel with lazy breadth-first truncation,
//! exact moment iteration, and replica-parallel population simulation.

use crate::error::{Error, Result};
use crate::law::{OffspringLaw, Placement, StateIndex};
use crate::rng::RandomSource;
use crate::trace::{PopulationTrace, SurvivalEstimate, Terminator};
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::sync::Arc;

/// Sparse nonnegative operator `m` on a countable state space, materialized
/// row by row. Rows must be finite; infinite spaces are only ever explored
/// through finitely many reachable states.
#[derive(Clone)]
pub struct ExpectationKernel {
    row_fn: Arc<dyn Fn(usize) -> Vec<(usize, f64)> + Send + Sync>,
}

impl std::fmt::Debug for ExpectationKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExpectationKernel").finish_non_exhaustive()
    }
}

impl ExpectationKernel {
    pub fn from_fn(row_fn: impl Fn(usize) -> Vec<(usize, f64)> + Send + Sync + 'static) -> Self {
        Self { row_fn: Arc::new(row_fn) }
    }

    pub fn from_dense(matrix: &[Vec<f64>]) -> Result<Self> {
        let n = matrix.len();
        for row in matrix {
            if row.len() != n {
                return Err(Error::Config("dense kernel must be square".into()));
            }
            if row.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(Error::Config("kernel entries must be nonnegative and finite".into()));
            }
        }
        let rows: Vec<Vec<(usize, f64)>> = matrix
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|&(_, &v)| v != 0.0)
                    .map(|(j, &v)| (j, v))
                    .collect()
            })
            .collect();
        Ok(Self::from_fn(move |x| rows.get(x).cloned().unwrap_or_default()))
    }

    /// Row `m(x, .)` as a sparse list of `(target, weight)`.
    pub fn row(&self, x: StateIndex) -> Vec<(StateIndex, f64)> {
        (self.row_fn)(x.0)
            .into_iter()
            .map(|(y, v)| {
                debug_assert!(v >= 0.0 && v.is_finite());
                (StateIndex(y), v)
            })
            .collect()
    }

    fn raw_row(&self, x: usize) -> Vec<(usize, f64)> {
        (self.row_fn)(x)
    }

    /// One step of the forward measure iteration `v <- v m`, so that starting
    /// from a point mass at `x` the iterates carry `m^n(x, .)`.
    pub fn propagate_measure(&self, v: &BTreeMap<usize, f64>) -> BTreeMap<usize, f64> {
        let mut next = BTreeMap::new();
        for (&x, &mass) in v {
            if mass == 0.0 {
                continue;
            }
            for (y, w) in self.raw_row(x) {
                *next.entry(y).or_insert(0.0) += mass * w;
            }
        }
        next
    }

    /// One step of the function iteration `u <- m u`, restricted to the given
    /// states. Targets outside `u`'s support contribute zero.
    pub fn apply_to_fn(&self, u: &BTreeMap<usize, f64>, states: &[usize]) -> BTreeMap<usize, f64> {
        let mut out = BTreeMap::new();
        for &x in states {
            let mut acc = 0.0;
            for (y, w) in self.raw_row(x) {
                if let Some(&uy) = u.get(&y) {
                    acc += w * uy;
                }
            }
            out.insert(x, acc);
        }
        out
    }

    /// Breadth-first truncation from `root`: up to `max_states` states in BFS
    /// order together with the induced dense submatrix.
    pub fn bfs_truncation(&self, root: StateIndex, max_states: usize) -> Truncation {
        let mut states = Vec::new();
        let mut index_of = BTreeMap::new();
        let mut queue = std::collections::VecDeque::new();
        states.push(root.0);
        index_of.insert(root.0, 0usize);
        queue.push_back(root.0);
        while let Some(x) = queue.pop_front() {
            if states.len() >= max_states {
                break;
            }
            for (y, _) in self.raw_row(x) {
                if states.len() >= max_states {
                    break;
                }
                if !index_of.contains_key(&y) {
                    index_of.insert(y, states.len());
                    states.push(y);
                    queue.push_back(y);
                }
            }
        }
        let n = states.len();
        let mut dense = vec![vec![0.0; n]; n];
        for (i, &x) in states.iter().enumerate() {
            for (y, w) in self.raw_row(x) {
                if let Some(&j) = index_of.get(&y) {
                    dense[i][j] = w;
                }
            }
        }
        Truncation { states, index_of, dense }
    }
}

/// Finite truncation of a kernel: the retained states (BFS order from the
/// root), their dense index map, and the induced submatrix.
#[derive(Debug, Clone)]
pub struct Truncation {
    pub states: Vec<usize>,
    pub index_of: BTreeMap<usize, usize>,
    pub dense: Vec<Vec<f64>>,
}

impl Truncation {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Branching Markov chain specification: one offspring law per state. The
/// induced expectation kernel row at `x` is the law's mean times the expected
/// child placement.
#[derive(Clone)]
pub struct BmcSpec {
    law_fn: Arc<dyn Fn(usize) -> OffspringLaw + Send + Sync>,
}

impl std::fmt::Debug for BmcSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BmcSpec").finish_non_exhaustive()
    }
}

impl BmcSpec {
    pub fn from_fn(law_fn: impl Fn(usize) -> OffspringLaw + Send + Sync + 'static) -> Self {
        Self { law_fn: Arc::new(law_fn) }
    }

    /// Same offspring law at every state.
    pub fn uniform(law: OffspringLaw) -> Self {
        Self::from_fn(move |_| law.clone())
    }

    pub fn law(&self, x: StateIndex) -> OffspringLaw {
        (self.law_fn)(x.0)
    }

    /// Expectation kernel implied by the per-state laws.
    pub fn kernel(&self) -> ExpectationKernel {
        let law_fn = Arc::clone(&self.law_fn);
        ExpectationKernel::from_fn(move |x| {
            let law = law_fn(x);
            let mean = law.mean();
            if mean == 0.0 {
                return Vec::new();
            }
            match law.displacement() {
                // both placement kinds average to the same row
                None => vec![(x, mean)],
                Some(placement) => placement
                    .targets()
                    .iter()
                    .filter(|&&(_, w)| w > 0.0)
                    .map(|&(y, w)| (y.0, mean * w))
                    .collect(),
            }
        })
    }
}

/// Exact expected population size `E_x[N_n]` after `n` generations, computed
/// by sparse kernel-vector products over the reachable truncation. No
/// sampling error; fails if the reachable support exceeds `cap` states.
pub fn expected_counts(spec: &BmcSpec, start: StateIndex, n: usize, cap: usize) -> Result<f64> {
    expected_counts_kernel(&spec.kernel(), start, n, cap)
}

pub fn expected_counts_kernel(
    kernel: &ExpectationKernel,
    start: StateIndex,
    n: usize,
    cap: usize,
) -> Result<f64> {
    let mut v = BTreeMap::new();
    v.insert(start.0, 1.0f64);
    for _ in 0..n {
        v = kernel.propagate_measure(&v);
        if v.len() > cap {
            return Err(Error::TruncationOverflow { cap });
        }
    }
    Ok(v.values().sum())
}

/// Draw a binomial count; counts are bulk-sampled per state so population
/// size never enters the per-generation cost.
fn binomial(n: u64, p: f64, rng: &mut impl Rng) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("valid binomial").sample(rng)
}

/// Split `count` particles over the law's atoms (multinomial via sequential
/// binomials) and return the resulting child total per atom.
fn sample_atom_counts(law: &OffspringLaw, count: u64, rng: &mut impl Rng) -> Vec<(u32, u64)> {
    let atoms = law.probs();
    let mut out = Vec::with_capacity(atoms.len());
    let mut remaining = count;
    let mut mass = 1.0f64;
    for (i, &(n, p)) in atoms.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        let k = if i + 1 == atoms.len() {
            remaining
        } else {
            binomial(remaining, (p / mass).clamp(0.0, 1.0), rng)
        };
        if k > 0 {
            out.push((n, k));
        }
        remaining -= k;
        mass -= p;
    }
    out
}

/// Scatter branching events over placement targets (multinomial over
/// `trials` draws, `unit` children landing per draw).
fn scatter_children(
    targets: &[(StateIndex, f64)],
    trials: u64,
    unit: u64,
    next: &mut BTreeMap<usize, u64>,
    rng: &mut impl Rng,
) {
    let mut remaining = trials;
    let mut mass = 1.0f64;
    for (i, &(y, w)) in targets.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        let k = if i + 1 == targets.len() {
            remaining
        } else {
            binomial(remaining, (w / mass).clamp(0.0, 1.0), rng)
        };
        if k > 0 {
            *next.entry(y.0).or_insert(0) += k * unit;
        }
        remaining -= k;
        mass -= w;
    }
}

/// Simulate one replica. Particles are stored as per-state counts, so the
/// per-generation cost is linear in the number of distinct occupied states.
/// Stops at the horizon, at extinction, or when the population reaches
/// `cap` (flagged in the trace's terminator).
pub fn simulate(
    spec: &BmcSpec,
    start: StateIndex,
    horizon: usize,
    cap: u64,
    rng: &mut impl Rng,
) -> PopulationTrace {
    assert!(cap >= 1, "cap must be at least 1");
    let mut pop: BTreeMap<usize, u64> = BTreeMap::new();
    pop.insert(start.0, 1);
    let mut times = vec![0.0];
    let mut counts = vec![1u64];
    let mut terminator = Terminator::Horizon;
    for gen in 1..=horizon {
        let mut next: BTreeMap<usize, u64> = BTreeMap::new();
        for (&x, &c) in &pop {
            let law = spec.law(StateIndex(x));
            for (n_children, parents) in sample_atom_counts(&law, c, rng) {
                let total = n_children as u64 * parents;
                if total == 0 {
                    continue;
                }
                match law.displacement() {
                    None => *next.entry(x).or_insert(0) += total,
                    Some(Placement::Independent(targets)) => {
                        scatter_children(targets, total, 1, &mut next, rng)
                    }
                    // one target per branching event, all children follow
                    Some(Placement::AllTogether(targets)) => {
                        scatter_children(targets, parents, n_children as u64, &mut next, rng)
                    }
                }
            }
        }
        pop = next;
        let total: u64 = pop.values().sum();
        times.push(gen as f64);
        counts.push(total);
        if total == 0 {
            terminator = Terminator::Extinct;
            break;
        }
        if total >= cap {
            terminator = Terminator::CapHit;
            break;
        }
    }
    PopulationTrace::new(times, counts, terminator)
}

/// Monte Carlo estimate of the global-survival probability. A replica counts
/// as surviving when it is alive at the horizon or hit the population cap
/// (supercritical populations at the cap die out with probability at most
/// `q^cap`, reported via `cap_survival_lower_bound`).
pub fn survival_probability_mc(
    spec: &BmcSpec,
    start: StateIndex,
    horizon: usize,
    cap: u64,
    replicas: usize,
    rng: RandomSource,
) -> SurvivalEstimate {
    let outcomes: Vec<Terminator> = (0..replicas)
        .into_par_iter()
        .map(|k| {
            let mut r = rng.offset(k as u64).rng();
            simulate(spec, start, horizon, cap, &mut r).terminator
        })
        .collect();
    let survived = outcomes.iter().filter(|&&t| t != Terminator::Extinct).count();
    let cap_hits = outcomes.iter().filter(|&&t| t == Terminator::CapHit).count();
    let mut est = SurvivalEstimate::from_outcomes(survived, cap_hits, replicas);
    if let Ok(ext) = crate::gw::extinction_probability(&spec.law(start)) {
        est.cap_survival_lower_bound = Some(1.0 - ext.value.powi(cap.min(1 << 30) as i32));
    }
    est
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doubling() -> BmcSpec {
        BmcSpec::uniform(OffspringLaw::new(vec![(2, 1.0)]).unwrap())
    }

    fn quarter() -> BmcSpec {
        BmcSpec::uniform(OffspringLaw::new(vec![(0, 0.25), (2, 0.75)]).unwrap())
    }

    /// Symmetric branching random walk on the integers, zigzag-indexed
    /// (0, +1, -1, +2, -2, ...), mean offspring `mu` split over the two
    /// neighbours.
    pub(crate) fn brw_z(mu: f64) -> ExpectationKernel {
        ExpectationKernel::from_fn(move |x| {
            let z = crate::config::zigzag_decode(x);
            vec![
                (crate::config::zigzag_encode(z - 1), mu / 2.0),
                (crate::config::zigzag_encode(z + 1), mu / 2.0),
            ]
        })
    }

    #[test]
    fn deterministic_doubling_expected_counts() {
        let v = expected_counts(&doubling(), StateIndex(0), 10, 1024).unwrap();
        assert_eq!(v, 1024.0);
    }

    #[test]
    fn expected_counts_matches_dense_matrix_power() {
        // Random 5-state kernel vs dense m^6 brute force.
        use rand::Rng;
        let mut rng = RandomSource::new(23).rng();
        let n = 5;
        let m: Vec<Vec<f64>> =
            (0..n).map(|_| (0..n).map(|_| rng.random_range(0.0..0.7)).collect()).collect();
        let kernel = ExpectationKernel::from_dense(&m).unwrap();
        // Dense power: v = e_2 m^6, oracle computed with plain loops.
        let mut v = vec![0.0; n];
        v[2] = 1.0;
        for _ in 0..6 {
            let mut w = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    w[j] += v[i] * m[i][j];
                }
            }
            v = w;
        }
        let oracle: f64 = v.iter().sum();
        let got = expected_counts_kernel(&kernel, StateIndex(2), 6, 64).unwrap();
        assert!((got - oracle).abs() < 1e-12 * oracle.max(1.0));
    }

    #[test]
    fn truncation_overflow_is_reported() {
        let kernel = brw_z(1.3);
        let err = expected_counts_kernel(&kernel, StateIndex(0), 50, 10).unwrap_err();
        assert!(matches!(err, Error::TruncationOverflow { cap: 10 }));
    }

    #[test]
    fn semigroup_property_on_small_kernel() {
        // E_x[N_{a+b}] = sum_y m^a(x,y) E_y[N_b]
        let m = vec![
            vec![0.2, 0.7, 0.0],
            vec![0.3, 0.0, 0.9],
            vec![0.5, 0.5, 0.1],
        ];
        let kernel = ExpectationKernel::from_dense(&m).unwrap();
        let (a, b) = (3usize, 4usize);
        let direct = expected_counts_kernel(&kernel, StateIndex(0), a + b, 16).unwrap();
        let mut v = BTreeMap::new();
        v.insert(0usize, 1.0);
        for _ in 0..a {
            v = kernel.propagate_measure(&v);
        }
        let composed: f64 = v
            .iter()
            .map(|(&y, &mass)| {
                mass * expected_counts_kernel(&kernel, StateIndex(y), b, 16).unwrap()
            })
            .sum();
        assert!((direct - composed).abs() < 1e-12 * direct.max(1.0));
    }

    #[test]
    fn pure_killing_trace() {
        let spec = BmcSpec::uniform(OffspringLaw::new(vec![(0, 1.0)]).unwrap());
        let mut rng = RandomSource::new(1).rng();
        let trace = simulate(&spec, StateIndex(0), 10, 100, &mut rng);
        assert_eq!(trace.counts, vec![1, 0]);
        assert_eq!(trace.terminator, Terminator::Extinct);
    }

    #[test]
    fn doubling_hits_cap_at_generation_ten() {
        let mut rng = RandomSource::new(1).rng();
        let trace = simulate(&doubling(), StateIndex(0), 100, 1000, &mut rng);
        assert_eq!(trace.terminator, Terminator::CapHit);
        assert_eq!(trace.times.len(), 11);
        assert_eq!(trace.final_count(), 1024);
    }

    #[test]
    fn survival_extremes() {
        let kill = BmcSpec::uniform(OffspringLaw::new(vec![(0, 1.0)]).unwrap());
        let est = survival_probability_mc(&kill, StateIndex(0), 50, 1000, 200, RandomSource::new(4));
        assert_eq!(est.estimate, 0.0);
        assert_eq!(est.stderr, 0.0);
        let est = survival_probability_mc(&doubling(), StateIndex(0), 50, 1000, 200, RandomSource::new(4));
        assert_eq!(est.estimate, 1.0);
    }

    #[test]
    fn quarter_law_extinction_frequency_matches_gw_oracle() {
        // Extinction frequency over 1e5 replicas within 4 binomial sigma of
        // the exact fixed point 1/3.
        let est = survival_probability_mc(
            &quarter(),
            StateIndex(0),
            200,
            100_000,
            100_000,
            RandomSource::new(2024),
        );
        let q = 1.0 / 3.0;
        let sigma = (q * (1.0 - q) / 100_000f64).sqrt();
        let extinction_freq = 1.0 - est.estimate;
        assert!(
            (extinction_freq - q).abs() < 4.0 * sigma,
            "extinction {extinction_freq} vs {q} +- {}",
            4.0 * sigma
        );
    }

    #[test]
    fn mc_population_mean_tracks_expected_counts() {
        let spec = quarter();
        let n = 12;
        let expected = expected_counts(&spec, StateIndex(0), n, 64).unwrap();
        let replicas = 40_000;
        let src = RandomSource::new(77);
        let finals: Vec<f64> = (0..replicas)
            .into_par_iter()
            .map(|k| {
                let mut rng = src.offset(k as u64).rng();
                let t = simulate(&spec, StateIndex(0), n, u64::MAX / 2, &mut rng);
                t.final_count() as f64
            })
            .collect();
        let mean: f64 = finals.iter().sum::<f64>() / replicas as f64;
        let var: f64 =
            finals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (replicas - 1) as f64;
        let sigma = (var / replicas as f64).sqrt();
        assert!(
            (mean - expected).abs() < 5.0 * sigma,
            "mean {mean} vs expected {expected} +- {}",
            5.0 * sigma
        );
    }

    #[test]
    fn raising_offspring_mass_never_hurts_survival() {
        // Coupled seeds: same streams for both parameterizations.
        let lo = BmcSpec::uniform(OffspringLaw::new(vec![(0, 0.35), (2, 0.65)]).unwrap());
        let hi = BmcSpec::uniform(OffspringLaw::new(vec![(0, 0.30), (2, 0.70)]).unwrap());
        let src = RandomSource::new(99);
        let e_lo = survival_probability_mc(&lo, StateIndex(0), 100, 10_000, 20_000, src);
        let e_hi = survival_probability_mc(&hi, StateIndex(0), 100, 10_000, 20_000, src);
        let noise = 4.0 * (e_lo.stderr + e_hi.stderr);
        assert!(
            e_hi.estimate >= e_lo.estimate - noise,
            "hi {} vs lo {} (noise {noise})",
            e_hi.estimate,
            e_lo.estimate
        );
    }

    #[test]
    fn bfs_truncation_of_brw_is_symmetric_window() {
        let kernel = brw_z(1.3);
        let t = kernel.bfs_truncation(StateIndex(0), 9);
        // zigzag BFS covers [-4, 4]
        assert_eq!(t.len(), 9);
        let mut zs: Vec<i64> = t.states.iter().map(|&s| crate::config::zigzag_decode(s)).collect();
        zs.sort();
        assert_eq!(zs, (-4..=4).collect::<Vec<_>>());
    }
}
