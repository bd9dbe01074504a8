//! Discrete-time minorizing skeleton of a continuous-time branching process
//! with purely local branching.
//!
//! Over each unit time step, every particle's subtree is embedded into an
//! `n0`-ary candidate tree branching at rate `sup r`: candidate events are
//! accepted with probability `r(x)/sup r` (keeping a sampled number of the
//! `n0` branches) and otherwise keep a single branch. The skeleton keeps the
//! generation when the *unpruned* tree has at most `leaf_cap` leaves and
//! drops it otherwise, which bounds its offspring by `leaf_cap` while
//! retaining at least a `(1 - epsilon)` fraction of the time-1 expectation
//! kernel. Pruned-away branches are tracked as ghost leaves: they no longer
//! carry particles but keep multiplying inside the candidate tree, so the
//! leaf count seen by the cap has exactly the pure-birth law used to choose
//! `leaf_cap`.

use super::{BmpConfig, BranchField, Motion};
use crate::error::{Error, Result};
use crate::rng::RandomSource;
use crate::trace::Terminator;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Parameters of the skeleton construction.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SkeletonSpec {
    /// Offspring bound. Laws in this crate have explicit finite support, so
    /// the truncation step is the identity and `n0` is the support maximum.
    pub n0: u32,
    /// Generations whose unpruned candidate tree exceeds this leaf count are
    /// dropped from the skeleton.
    pub leaf_cap: usize,
    pub epsilon: f64,
    /// Achieved tail mean `E[V 1(V > leaf_cap)]` of the unit-time leaf
    /// count; at most `epsilon` by construction.
    pub leaf_tail_mean: f64,
}

impl SkeletonSpec {
    /// Build the skeleton parameters for the given branch data. Requires at
    /// least one child per branching event: the relative mean-mass guarantee
    /// compares a single surviving line against the full expectation kernel,
    /// which fails under soft killing.
    pub fn new(branch: &BranchField, epsilon: f64) -> Result<Self> {
        if !(0.0 < epsilon && epsilon < 1.0) {
            return Err(Error::Config("epsilon must lie in (0, 1)".into()));
        }
        if branch.min_children < 1 {
            return Err(Error::Config(
                "skeleton guarantee needs offspring >= 1 (no soft killing)".into(),
            ));
        }
        let n0 = branch.max_children.max(2);
        let rate = branch.rate.sup;
        let dist = leaf_count_distribution(n0, rate, 1.0, epsilon * 1e-3);
        let (leaf_cap, leaf_tail_mean) = choose_leaf_cap(n0, &dist, epsilon);
        Ok(Self { n0, leaf_cap, epsilon, leaf_tail_mean })
    }
}

/// Distribution of the leaf count of an `n0`-ary tree branching at `rate`
/// over time `t`: a pure-birth chain on counts `1 + j (n0 - 1)` with birth
/// rate `count * rate`, integrated by RK4. The index-`j` entry is
/// `P(V = 1 + j (n0 - 1))`.
pub fn leaf_count_distribution(n0: u32, rate: f64, t: f64, tail_tol: f64) -> Vec<f64> {
    let step = (n0 - 1).max(1) as f64;
    let mut j_max = 64usize;
    loop {
        let counts: Vec<f64> = (0..=j_max).map(|j| 1.0 + j as f64 * step).collect();
        let deriv = |p: &[f64], dp: &mut [f64]| {
            for j in 0..=j_max {
                let mut v = -rate * counts[j] * p[j];
                if j > 0 {
                    v += rate * counts[j - 1] * p[j - 1];
                }
                dp[j] = v;
            }
        };
        let mut p = vec![0.0; j_max + 1];
        p[0] = 1.0;
        let dt = (1e-3f64).min(0.25 / (rate * counts[j_max]));
        let steps = (t / dt).ceil() as usize;
        let h = t / steps as f64;
        let mut k1 = vec![0.0; j_max + 1];
        let mut k2 = vec![0.0; j_max + 1];
        let mut k3 = vec![0.0; j_max + 1];
        let mut k4 = vec![0.0; j_max + 1];
        let mut tmp = vec![0.0; j_max + 1];
        for _ in 0..steps {
            deriv(&p, &mut k1);
            for j in 0..=j_max {
                tmp[j] = p[j] + 0.5 * h * k1[j];
            }
            deriv(&tmp, &mut k2);
            for j in 0..=j_max {
                tmp[j] = p[j] + 0.5 * h * k2[j];
            }
            deriv(&tmp, &mut k3);
            for j in 0..=j_max {
                tmp[j] = p[j] + h * k3[j];
            }
            deriv(&tmp, &mut k4);
            for j in 0..=j_max {
                p[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
        }
        let mass: f64 = p.iter().sum();
        // The truncated chain loses mass through the top state; accept once
        // the lost tail (weighted by a crude count bound) is negligible.
        if (1.0 - mass) * counts[j_max] < tail_tol {
            return p;
        }
        j_max *= 2;
    }
}

/// Smallest cap `m` with `E[V 1(V > m)] <= epsilon`, returned together with
/// the achieved tail mean.
fn choose_leaf_cap(n0: u32, dist: &[f64], epsilon: f64) -> (usize, f64) {
    let step = (n0 - 1).max(1) as f64;
    let counts: Vec<f64> = (0..dist.len()).map(|j| 1.0 + j as f64 * step).collect();
    let mut tail: f64 = counts.iter().zip(dist).map(|(&c, &p)| c * p).sum();
    for j in 0..dist.len() {
        // tail now holds E[V 1(V > counts[j - 1])]; check cap = counts[j]
        tail -= counts[j] * dist[j];
        if tail <= epsilon {
            return (counts[j] as usize, tail.max(0.0));
        }
    }
    (counts.last().map(|&c| c as usize).unwrap_or(1), tail.max(0.0))
}

struct UnitOutcome {
    children: Vec<f64>,
    /// Leaf count of the unpruned candidate tree stayed within the cap.
    within_cap: bool,
}

/// Evolve one particle's subtree over a unit time interval, tracking the
/// unpruned candidate tree's leaf count when `track_ghosts` is set.
fn unit_interval(
    x0: f64,
    track_ghosts: bool,
    motion: &Motion,
    branch: &BranchField,
    skel: &SkeletonSpec,
    dt: f64,
    max_sub: usize,
    rng: &mut impl Rng,
) -> UnitOutcome {
    let rate_sup = branch.rate.sup;
    let p_candidate = if rate_sup > 0.0 { 1.0 - (-rate_sup * dt).exp() } else { 0.0 };
    let steps = (1.0 / dt).round().max(1.0) as usize;
    let mut sub = vec![x0];
    let mut scratch: Vec<f64> = Vec::new();
    let mut ghosts: u64 = 0;
    let n0 = skel.n0 as u64;
    for _ in 0..steps {
        if track_ghosts && ghosts > 0 && p_candidate > 0.0 {
            let events = Binomial::new(ghosts, p_candidate).unwrap().sample(rng);
            ghosts += (n0 - 1) * events;
        }
        scratch.clear();
        for &x in &sub {
            let mut branched = false;
            if p_candidate > 0.0 {
                let u: f64 = rng.random();
                if u < p_candidate {
                    let accept: f64 = rng.random();
                    if accept * rate_sup < branch.rate_at(x) {
                        let n = branch.law_at(x).sample_count(rng);
                        for _ in 0..n {
                            scratch.push(x);
                        }
                        if track_ghosts {
                            ghosts += n0 - n as u64;
                        }
                        branched = true;
                    } else if track_ghosts {
                        ghosts += n0 - 1;
                    }
                }
            }
            if !branched {
                let moved = match motion {
                    Motion::Diffusion1d { drift, diffusion, domain } => {
                        super::diffusion_step(x, drift, diffusion, domain, dt, rng)
                    }
                    Motion::DiffusionRadial { dim, drift, diffusion, radius, inner } => {
                        super::radial_step(x, *dim, drift, diffusion, *radius, *inner, dt, rng)
                    }
                    Motion::Ctmc { .. } => None,
                };
                match moved {
                    Some(x2) => scratch.push(x2),
                    // Boundary killing belongs to the motion, not the tree:
                    // the killed line's branch keeps multiplying as a ghost.
                    None => {
                        if track_ghosts {
                            ghosts += 1;
                        }
                    }
                }
            }
        }
        std::mem::swap(&mut sub, &mut scratch);
        if sub.len() >= max_sub {
            break;
        }
    }
    let leaves = sub.len() as u64 + ghosts;
    UnitOutcome { children: sub, within_cap: leaves <= skel.leaf_cap as u64 }
}

/// Coupled run of the full process and its skeleton: skeleton particles are
/// a tagged subset of the full population, so domination at integer times
/// holds pathwise, replica by replica.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoupledRun {
    pub times: Vec<u64>,
    pub full: Vec<u64>,
    pub skeleton: Vec<u64>,
    pub terminator: Terminator,
}

impl CoupledRun {
    pub fn domination_violations(&self) -> usize {
        self.full.iter().zip(&self.skeleton).filter(|&(&f, &s)| s > f).count()
    }
}

pub fn simulate_coupled(
    motion: &Motion,
    branch: &BranchField,
    skel: &SkeletonSpec,
    start: f64,
    horizon_units: usize,
    cfg: &BmpConfig,
    rng: &mut impl Rng,
) -> Result<CoupledRun> {
    if matches!(motion, Motion::Ctmc { .. }) {
        return Err(Error::Config("coupled skeleton runs support diffusive motion only".into()));
    }
    cfg.validate()?;
    let mut particles: Vec<(f64, bool)> = vec![(start, true)];
    let mut times = vec![0u64];
    let mut full = vec![1u64];
    let mut skeleton = vec![1u64];
    let mut terminator = Terminator::Horizon;
    for unit in 1..=horizon_units {
        let mut next = Vec::with_capacity(particles.len());
        for &(x, is_skel) in &particles {
            let outcome =
                unit_interval(x, is_skel, motion, branch, skel, cfg.dt, cfg.cap * 4, rng);
            let flag = is_skel && outcome.within_cap;
            for c in outcome.children {
                next.push((c, flag));
            }
        }
        particles = next;
        times.push(unit as u64);
        full.push(particles.len() as u64);
        skeleton.push(particles.iter().filter(|&&(_, s)| s).count() as u64);
        if particles.is_empty() {
            terminator = Terminator::Extinct;
            break;
        }
        if particles.len() >= cfg.cap {
            terminator = Terminator::CapHit;
            break;
        }
    }
    Ok(CoupledRun { times, full, skeleton, terminator })
}

/// Monte Carlo mean of the skeleton's one-step generation size from a single
/// particle at `start` (the mass of the skeleton's time-1 mean kernel).
pub fn skeleton_mean_mass(
    motion: &Motion,
    branch: &BranchField,
    skel: &SkeletonSpec,
    start: f64,
    replicas: usize,
    dt: f64,
    rng: RandomSource,
) -> (f64, f64) {
    let masses: Vec<f64> = (0..replicas)
        .into_par_iter()
        .map(|k| {
            let mut r = rng.offset(k as u64).rng();
            let outcome = unit_interval(start, true, motion, branch, skel, dt, 1 << 22, &mut r);
            if outcome.within_cap {
                outcome.children.len() as f64
            } else {
                0.0
            }
        })
        .collect();
    let n = replicas as f64;
    let mean = masses.iter().sum::<f64>() / n;
    let var = masses.iter().map(|&v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
